#include <charconv>
#include <cmath>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "dipir/errors.hpp"
#include "dipir/guidance.hpp"

namespace dipir {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

struct RemoteProvider::Impl {
    httplib::Client client;
    explicit Impl(const std::string &endpoint) : client(endpoint) {}
};

RemoteProvider::RemoteProvider(const std::string &endpoint, std::string prompt, double timeout_seconds)
    : prompt_(std::move(prompt)) {
    try {
        impl_ = std::make_unique<Impl>(endpoint);
    } catch (const std::exception &e) {
        throw GuidanceUnavailable("remote guidance: invalid endpoint '" + endpoint + "': " + e.what());
    }
    if (!impl_->client.is_valid()) throw GuidanceUnavailable("remote guidance: invalid endpoint '" + endpoint + "'");
    const auto sec = static_cast<time_t>(timeout_seconds);
    const auto usec = static_cast<time_t>((timeout_seconds - static_cast<double>(sec)) * 1e6);
    impl_->client.set_connection_timeout(sec, usec);
    impl_->client.set_read_timeout(sec, usec);
    impl_->client.set_write_timeout(sec, usec);
    impl_->client.set_keep_alive(true);
    if (!health()) throw GuidanceUnavailable("remote guidance: health check failed at '" + endpoint + "'");
}

RemoteProvider::~RemoteProvider() = default;

bool RemoteProvider::health() {
    const auto res = impl_->client.Get("/health");
    return res && res->status == 200 && res->body == "ok";
}

GuidanceResult RemoteProvider::guidance(const GuidanceRequest &req) {
    const httplib::Headers headers = {
        {"x-prompt", req.prompt.empty() ? prompt_ : req.prompt},
        {"x-timestep", format_double(static_cast<double>(req.timestep) / req.total_steps)},
        {"x-seed", std::to_string(req.seed)},
        {"x-crop", format_crop_header(req.rect)},
    };
    const std::string body = encode_dpg1(req.crop);
    httplib::Result res;
    for (int attempt = 0; attempt < 2; ++attempt) {
        res = impl_->client.Post("/guidance", headers, body, "application/octet-stream");
        if (res && res->status < 500) break;
    }
    if (!res) throw GuidanceUnavailable("remote guidance: transport failure (" + httplib::to_string(res.error()) + ")");
    if (res->status != 200) throw GuidanceUnavailable("remote guidance: HTTP status " + std::to_string(res->status));
    GuidanceResult out;
    try {
        out.grad = decode_dpg1(res->body);
    } catch (const InvalidArgument &e) {
        throw GuidanceUnavailable(std::string("remote guidance: malformed response: ") + e.what());
    }
    if (!out.grad.same_shape(req.crop)) throw GuidanceUnavailable("remote guidance: response shape mismatch");
    if (res->has_header("x-loss")) {
        const std::string v = res->get_header_value("x-loss");
        double loss = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), loss);
        if (ec != std::errc() || p != v.data() + v.size()) throw GuidanceUnavailable("remote guidance: malformed x-loss");
        out.loss = loss;
    }
    out.rect = req.rect;
    return out;
}

struct GuidanceServer::Impl {
    std::shared_ptr<GuidanceProvider> provider;
    httplib::Server server;
    std::thread thread;
    std::mutex mutex;
    int port = -1;
};

GuidanceServer::GuidanceServer(std::shared_ptr<GuidanceProvider> provider) : impl_(std::make_unique<Impl>()) {
    impl_->provider = std::move(provider);
    impl_->server.Get("/health", [](const httplib::Request &, httplib::Response &res) {
        res.set_content("ok", "text/plain");
    });
    impl_->server.Post("/guidance", [this](const httplib::Request &http, httplib::Response &res) {
        GuidanceRequest req;
        try {
            req.crop = decode_dpg1(http.body);
            req.prompt = http.get_header_value("x-prompt");
            const std::string ts = http.get_header_value("x-timestep");
            double frac = 0;
            if (std::from_chars(ts.data(), ts.data() + ts.size(), frac).ec != std::errc())
                throw InvalidArgument("bad x-timestep");
            req.timestep = static_cast<int>(std::lround(frac * req.total_steps));
            const std::string seed = http.get_header_value("x-seed");
            if (std::from_chars(seed.data(), seed.data() + seed.size(), req.seed).ec != std::errc())
                throw InvalidArgument("bad x-seed");
            if (http.has_header("x-crop")) {
                const auto rect = parse_crop_header(http.get_header_value("x-crop"));
                if (!rect) throw InvalidArgument("bad x-crop");
                req.rect = *rect;
            } else {
                req.rect = {0, 0, req.crop.rows(), req.crop.cols()};
            }
        } catch (const std::exception &e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
            return;
        }
        try {
            std::lock_guard lock(impl_->mutex);
            const GuidanceResult out = impl_->provider->guidance(req);
            res.set_content(encode_dpg1(out.grad), "application/octet-stream");
            if (out.loss) res.set_header("x-loss", format_double(*out.loss));
        } catch (const InvalidArgument &e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
        } catch (const std::exception &e) {
            res.status = 503;
            res.set_content(e.what(), "text/plain");
        }
    });
}

GuidanceServer::~GuidanceServer() { stop(); }

int GuidanceServer::start() {
    if (impl_->port > 0) return impl_->port;
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    if (impl_->port < 0) throw GuidanceUnavailable("guidance server: cannot bind");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void GuidanceServer::stop() {
    if (impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
    impl_->port = -1;
}

std::string GuidanceServer::url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

}  // namespace dipir
