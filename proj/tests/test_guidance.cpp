#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>

#include "dipir/errors.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/guidance.hpp"

using namespace dipir;

namespace {

Image random_image(int r, int c, int ch, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(r, c, ch);
    for (double &v : img.data()) v = u(rng);
    return img;
}

Denoiser affine(double a, const Image &b) {
    return [a, b](const Image &z, int) {
        Image out = z;
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * z.data()[i] + b.data()[i];
        return out;
    };
}

Denoiser constant(const Image &v) {
    return [v](const Image &, int) { return v; };
}

double max_abs_diff(const Image &a, const Image &b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

Image disk_mask(int rows, int cols, int r0, int c0, int rr, int cc) {
    Image m(rows, cols, 1);
    for (int r = r0; r < r0 + rr; ++r)
        for (int c = c0; c < c0 + cc; ++c) m.at(r, c) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("noise schedule") {
    const NoiseSchedule s;
    CHECK(s.steps() == 1000);
    CHECK(s.alpha(0) == doctest::Approx(std::sqrt(1 - 0.00085)).epsilon(1e-12));
    for (int t = 0; t < s.steps(); ++t) {
        CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) <= 1e-9);
        if (t > 0) CHECK(s.alpha(t) <= s.alpha(t - 1));
    }
    CHECK(s.alpha(999) < 0.1);
}

TEST_CASE("SDS gradient") {
    const NoiseSchedule sched;
    GuidanceConfig cfg;
    const Image z = random_image(4, 5, 3, 1), noise = random_image(4, 5, 3, 2);
    const int t = 300;
    const double a = sched.alpha(t), sg = sched.sigma(t);

    SUBCASE("perfect denoiser without guidance gives zero") {
        cfg.cfg_scale = 0.0;
        const Image g = sds_grad_image(z, constant(noise), constant(random_image(4, 5, 3, 3)), t, noise, sched, cfg);
        for (double v : g.data()) CHECK(v == 0.0);
    }
    SUBCASE("equal conditional and unconditional collapse the guidance") {
        const Image e = random_image(4, 5, 3, 4);
        const Image g = sds_grad_image(z, constant(e), constant(e), t, noise, sched, cfg);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(g.data()[i] == doctest::Approx(a * (e.data()[i] - noise.data()[i])).epsilon(1e-12));
    }
    SUBCASE("affine denoisers match the closed form") {
        const double ac = 0.7, au = -0.3, s = cfg.cfg_scale;
        const Image bc = random_image(4, 5, 3, 5), bu = random_image(4, 5, 3, 6);
        cfg.weight = [](int tt) { return 0.5 + tt / 1000.0; };
        const double w = 0.5 + t / 1000.0;
        const Image g = sds_grad_image(z, affine(ac, bc), affine(au, bu), t, noise, sched, cfg);
        const double k = (1 + s) * ac - s * au;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double expect = w * a *
                                  (a * k * z.data()[i] + (sg * k - 1.0) * noise.data()[i] +
                                   (1 + s) * bc.data()[i] - s * bu.data()[i]);
            CHECK(std::abs(g.data()[i] - expect) <= 1e-6);
        }
    }
    SUBCASE("scales linearly with the weight") {
        const Image b = random_image(4, 5, 3, 7);
        const Image g1 = sds_grad_image(z, affine(0.2, b), affine(0.1, b), t, noise, sched, cfg);
        cfg.weight = [](int) { return 3.0; };
        const Image g3 = sds_grad_image(z, affine(0.2, b), affine(0.1, b), t, noise, sched, cfg);
        for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g3.data()[i] == doctest::Approx(3 * g1.data()[i]));
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(sds_grad_image(z, constant(noise), constant(noise), t, random_image(2, 2, 3, 8), sched, cfg),
                        InvalidArgument);
        CHECK_THROWS_AS(sds_grad_image(z, constant(random_image(2, 2, 3, 8)), constant(noise), t, noise, sched, cfg),
                        InvalidArgument);
        CHECK_THROWS_AS(sds_grad_image(z, constant(noise), constant(noise), 1000, noise, sched, cfg), InvalidArgument);
    }
}

TEST_CASE("LDS gradient") {
    const NoiseSchedule sched;
    const GuidanceConfig cfg;
    const Image z = random_image(3, 4, 3, 11), noise = random_image(3, 4, 3, 12);
    const int t = 120;
    const double a = sched.alpha(t), sg = sched.sigma(t);
    SUBCASE("identical models give exactly zero") {
        const Denoiser d = affine(0.4, random_image(3, 4, 3, 13));
        const Image g = lds_grad_image(z, d, d, t, noise, sched, cfg);
        for (double v : g.data()) CHECK(v == 0.0);
    }
    SUBCASE("zero base returns the scaled adapted prediction") {
        const Image b = random_image(3, 4, 3, 14);
        const Image g = lds_grad_image(z, affine(0.4, b), constant(Image(3, 4, 3)), t, noise, sched, cfg);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double zt = a * z.data()[i] + sg * noise.data()[i];
            CHECK(std::abs(g.data()[i] - a * (0.4 * zt + b.data()[i])) <= 1e-12);
        }
    }
    SUBCASE("affine models match the closed form") {
        const Image b1 = random_image(3, 4, 3, 15), b2 = random_image(3, 4, 3, 16);
        const Image g = lds_grad_image(z, affine(1.3, b1), affine(-0.2, b2), t, noise, sched, cfg);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double expect = a * (1.5 * (a * z.data()[i] + sg * noise.data()[i]) + b1.data()[i] - b2.data()[i]);
            CHECK(std::abs(g.data()[i] - expect) <= 1e-6);
        }
    }
    SUBCASE("SDS without guidance equals LDS against a noise-predicting base") {
        GuidanceConfig c0 = cfg;
        c0.cfg_scale = 0.0;
        const Denoiser cond = affine(0.6, random_image(3, 4, 3, 17));
        const Image sds = sds_grad_image(z, cond, affine(-1.0, noise), t, noise, sched, c0);
        const Image lds = lds_grad_image(z, cond, constant(noise), t, noise, sched, c0);
        CHECK(max_abs_diff(sds, lds) <= 1e-12);
    }
}

TEST_CASE("strength schedule") {
    const GuidanceConfig cfg;
    CHECK(strength_schedule(0, 600, cfg) == 0.6);
    CHECK(strength_schedule(600, 600, cfg) == 0.3);
    CHECK(strength_schedule(300, 600, cfg) == doctest::Approx(0.45).epsilon(1e-15));
    CHECK_THROWS_AS(strength_schedule(601, 600, cfg), InvalidArgument);
    const NoiseSchedule sched;
    for (int it = 0; it <= 600; it += 7) {
        const int t = sample_timestep(it, 600, 99, sched, cfg);
        CHECK(t >= 20);
        CHECK(t <= static_cast<int>(strength_schedule(it, 600, cfg) * 1000));
        CHECK(t == sample_timestep(it, 600, 99, sched, cfg));
    }
}

TEST_CASE("crop sampling") {
    GuidanceConfig cfg;
    SUBCASE("bounding box filling the image") {
        const Image m(40, 60, 1, 1.0);
        CHECK(sample_crop(m, 0, 1, cfg) == PixelRect{0, 0, 40, 60});
    }
    SUBCASE("fixed multiple, centered box") {
        const Image m = disk_mask(200, 300, 75, 125, 50, 50);
        cfg.crop_min = cfg.crop_max = 1.2;
        const PixelRect r = sample_crop(m, 3, 1, cfg);
        CHECK(r.rows == 60);
        CHECK(r.cols == 60);
        CHECK(r.row0 == 70);
        CHECK(r.col0 == 120);
    }
    SUBCASE("every crop contains the box") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> u(0, 99);
        for (int k = 0; k < 1000; ++k) {
            const int r0 = u(rng) % 60, c0 = u(rng) % 90, rr = 1 + u(rng) % (64 - r0), cc = 1 + u(rng) % (96 - c0);
            const Image m = disk_mask(64, 96, r0, c0, rr, cc);
            const PixelRect r = sample_crop(m, k, 7, cfg);
            REQUIRE(r.row0 >= 0);
            REQUIRE(r.col0 >= 0);
            REQUIRE(r.row0 + r.rows <= 64);
            REQUIRE(r.col0 + r.cols <= 96);
            CHECK(r.row0 <= r0);
            CHECK(r.col0 <= c0);
            CHECK(r.row0 + r.rows >= r0 + rr);
            CHECK(r.col0 + r.cols >= c0 + cc);
            if (std::ceil(2.5 * std::max(rr, cc)) <= 64) CHECK(r.rows == r.cols);
        }
    }
    SUBCASE("deterministic per seed and iteration") {
        const Image m = disk_mask(64, 96, 20, 30, 10, 12);
        CHECK(sample_crop(m, 5, 1, cfg) == sample_crop(m, 5, 1, cfg));
    }
    SUBCASE("empty mask") { CHECK_THROWS_AS(sample_crop(Image(8, 8, 1), 0, 0, cfg), ObjectNotVisible); }
}

TEST_CASE("photometric oracle") {
    const Image ref = random_image(10, 12, 3, 21, 0, 1);
    PhotometricOracle oracle(ref);
    GuidanceRequest req;
    req.rect = {2, 3, 5, 6};
    req.crop = crop(ref, req.rect);
    SUBCASE("matching crop has zero gradient") {
        const auto res = oracle.guidance(req);
        for (double v : res.grad.data()) CHECK(v == 0.0);
        CHECK(*res.loss == 0.0);
    }
    SUBCASE("constant offset gives the scaled sign") {
        for (double &v : req.crop.data()) v += 0.1;
        const auto res = oracle.guidance(req);
        for (double v : res.grad.data()) CHECK(v == doctest::Approx(1.0 / (3 * 5 * 6)).epsilon(1e-15));
        CHECK(*res.loss == doctest::Approx(0.1));
    }
    SUBCASE("random pair matches finite differences") {
        req.crop = random_image(5, 6, 3, 22, 0, 1);
        const auto res = oracle.guidance(req);
        const Image target = crop(ref, req.rect);
        auto loss = [&](std::span<const double> p) {
            Image x = req.crop;
            std::copy(p.begin(), p.end(), x.data().begin());
            return l1_loss(x, target, nullptr);
        };
        const auto report = finite_diff_check(loss, req.crop.data(), res.grad.data(), 1e-6, 1e-6);
        CHECK_MESSAGE(report.passed(), report.summary("l1"));
    }
    SUBCASE("upsampled crops compare against the resized reference") {
        req.crop = resize_bilinear(crop(ref, req.rect), 16, 16);
        const auto res = oracle.guidance(req);
        CHECK(res.grad.rows() == 16);
        CHECK(*res.loss == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("stub denoiser provider pulls toward the reference") {
    const Image ref = random_image(8, 8, 3, 31, 0, 1);
    StubDenoiserProvider stub(ref);
    GuidanceRequest req;
    req.rect = {0, 0, 8, 8};
    req.crop = random_image(8, 8, 3, 32, 0, 1);
    req.timestep = 200;
    const auto res = stub.guidance(req);
    const NoiseSchedule s;
    const double k = s.alpha(200) * s.alpha(200) / s.sigma(200);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(res.grad.data()[i] == doctest::Approx(k * (req.crop.data()[i] - ref.data()[i])).epsilon(1e-9));
}

TEST_CASE("DPG1 payload layout") {
    Image img(2, 3, 3);
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = 0.25 * static_cast<double>(i);
    const std::string p = encode_dpg1(img);
    REQUIRE(p.size() == 16 + 4 * 18);
    CHECK(p.substr(0, 4) == "DPG1");
    CHECK(static_cast<unsigned char>(p[4]) == 2);
    CHECK(static_cast<unsigned char>(p[8]) == 3);
    CHECK(static_cast<unsigned char>(p[12]) == 3);
    // 0.25f = 0x3e800000, little-endian.
    CHECK(static_cast<unsigned char>(p[20]) == 0x00);
    CHECK(static_cast<unsigned char>(p[23]) == 0x3e);
    CHECK(static_cast<unsigned char>(p[22]) == 0x80);
    CHECK(decode_dpg1(p) == img);
    CHECK_THROWS_AS(decode_dpg1("DPG2" + p.substr(4)), InvalidArgument);
    CHECK_THROWS_AS(decode_dpg1(p.substr(0, p.size() - 1)), InvalidArgument);
    CHECK_THROWS_AS(decode_dpg1("DPG1"), InvalidArgument);
    CHECK(parse_crop_header(format_crop_header({1, 2, 3, 4})) == PixelRect{1, 2, 3, 4});
    CHECK_FALSE(parse_crop_header("1;2;3;4"));
}

TEST_CASE("remote provider against an in-process server") {
    const Image ref = random_image(20, 24, 3, 41, 0, 1);
    GuidanceRequest req;
    req.rect = {3, 4, 10, 12};
    req.crop = resize_bilinear(random_image(10, 12, 3, 42, 0, 1), 16, 16);
    req.timestep = 250;
    req.seed = 77;

    SUBCASE("health and zero gradients") {
        GuidanceServer server(std::make_shared<ZeroProvider>());
        server.start();
        RemoteProvider remote(server.url(), "a photo");
        CHECK(remote.health());
        const auto res = remote.guidance(req);
        CHECK(res.grad.same_shape(req.crop));
        for (double v : res.grad.data()) CHECK(v == 0.0);
    }
    SUBCASE("remote oracle equals the in-process oracle") {
        GuidanceServer server(std::make_shared<PhotometricOracle>(ref));
        server.start();
        RemoteProvider remote(server.url(), "a photo");
        PhotometricOracle local(ref);
        Image crop32 = req.crop;
        for (double &v : crop32.data()) v = static_cast<float>(v);
        req.crop = crop32;
        const auto a = remote.guidance(req);
        const auto b = local.guidance(req);
        CHECK(max_abs_diff(a.grad, b.grad) <= 1e-5);
        REQUIRE(a.loss);
        CHECK(*a.loss == doctest::Approx(*b.loss).epsilon(1e-6));
    }
    SUBCASE("remote stub denoiser equals the in-process one") {
        GuidanceServer server(std::make_shared<StubDenoiserProvider>(ref));
        server.start();
        RemoteProvider remote(server.url(), "a photo");
        StubDenoiserProvider local(ref);
        for (double &v : req.crop.data()) v = static_cast<float>(v);
        const auto a = remote.guidance(req);
        const auto b = local.guidance(req);
        double scale = 0;
        for (double v : b.grad.data()) scale = std::max(scale, std::abs(v));
        CHECK(max_abs_diff(a.grad, b.grad) <= 1e-6 * std::max(1.0, scale));
    }
    SUBCASE("unreachable endpoint") {
        CHECK_THROWS_AS(RemoteProvider("http://127.0.0.1:1", "x", 0.5), GuidanceUnavailable);
    }
    SUBCASE("server stopped after the health check") {
        GuidanceServer server(std::make_shared<ZeroProvider>());
        server.start();
        RemoteProvider remote(server.url(), "x", 0.5);
        server.stop();
        CHECK_THROWS_AS(remote.guidance(req), GuidanceUnavailable);
    }
    SUBCASE("malformed and mismatched responses") {
        httplib::Server raw;
        std::atomic<int> calls{0};
        raw.Get("/health", [](const httplib::Request &, httplib::Response &r) { r.set_content("ok", "text/plain"); });
        raw.Post("/guidance", [&](const httplib::Request &, httplib::Response &r) {
            const int n = calls++;
            if (n == 0) r.set_content("garbage", "application/octet-stream");
            else r.set_content(encode_dpg1(Image(2, 2, 3)), "application/octet-stream");
        });
        const int port = raw.bind_to_any_port("127.0.0.1");
        std::thread th([&] { raw.listen_after_bind(); });
        raw.wait_until_ready();
        {
            RemoteProvider remote("http://127.0.0.1:" + std::to_string(port), "x", 2.0);
            CHECK_THROWS_AS(remote.guidance(req), GuidanceUnavailable);
            CHECK_THROWS_AS(remote.guidance(req), GuidanceUnavailable);
        }
        raw.stop();
        th.join();
    }
    SUBCASE("one retry after a server error") {
        httplib::Server raw;
        std::atomic<int> calls{0};
        raw.Get("/health", [](const httplib::Request &, httplib::Response &r) { r.set_content("ok", "text/plain"); });
        raw.Post("/guidance", [&](const httplib::Request &http, httplib::Response &r) {
            if (calls++ % 2 == 0) {
                r.status = 503;
                return;
            }
            Image g = decode_dpg1(http.body);
            for (double &v : g.data()) v = 0.5;
            r.set_content(encode_dpg1(g), "application/octet-stream");
        });
        const int port = raw.bind_to_any_port("127.0.0.1");
        std::thread th([&] { raw.listen_after_bind(); });
        raw.wait_until_ready();
        {
            RemoteProvider remote("http://127.0.0.1:" + std::to_string(port), "x", 2.0);
            const auto res = remote.guidance(req);
            CHECK(res.grad.data()[0] == 0.5);
            CHECK(calls == 2);
        }
        raw.stop();
        th.join();
    }
}
