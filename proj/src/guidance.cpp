#include "dipir/guidance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "dipir/errors.hpp"
#include "dipir/rng.hpp"
#include "dipir/vec.hpp"

namespace dipir {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw InvalidArgument("NoiseSchedule: need at least 2 steps");
    if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0))
        throw InvalidArgument("NoiseSchedule: invalid beta range");
    const double s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
    double alpha_bar = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double b = s0 + (s1 - s0) * i / (steps - 1);
        alpha_bar *= 1.0 - b * b;
        alpha_.push_back(std::sqrt(alpha_bar));
        sigma_.push_back(std::sqrt(1.0 - alpha_bar));
    }
}

void GuidanceConfig::validate() const {
    auto in01 = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in01(strength_start) || !in01(strength_end) || !in01(t_min))
        throw InvalidArgument("GuidanceConfig: strengths must lie in (0, 1]");
    if (t_min > std::min(strength_start, strength_end))
        throw InvalidArgument("GuidanceConfig: t_min exceeds the maximum strength");
    if (!(crop_min >= 1.0 && crop_max >= crop_min)) throw InvalidArgument("GuidanceConfig: crop multiples must be >= 1");
    if (crop_resolution < 1) throw InvalidArgument("GuidanceConfig: crop resolution must be positive");
    if (!weight) throw InvalidArgument("GuidanceConfig: missing weight function");
}

namespace {

void check_schedule_step(const NoiseSchedule &schedule, int t) {
    if (t < 0 || t >= schedule.steps()) throw InvalidArgument("guidance: timestep out of range");
}

Image noisy_input(const Image &z, const Image &noise, double alpha, double sigma) {
    require_same_shape(z, noise, "guidance noise");
    Image zt = z;
    auto d = zt.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = alpha * d[i] + sigma * noise.data()[i];
    return zt;
}

Image call_denoiser(const Denoiser &eps, const Image &zt, int t) {
    Image out = eps(zt, t);
    require_same_shape(zt, out, "denoiser output");
    return out;
}

}  // namespace

Image sds_grad_image(const Image &z, const Denoiser &eps_cond, const Denoiser &eps_uncond, int t, const Image &noise,
                     const NoiseSchedule &schedule, const GuidanceConfig &config) {
    check_schedule_step(schedule, t);
    const double a = schedule.alpha(t);
    const Image zt = noisy_input(z, noise, a, schedule.sigma(t));
    const Image ec = call_denoiser(eps_cond, zt, t);
    const Image eu = call_denoiser(eps_uncond, zt, t);
    const double s = config.cfg_scale, w = config.weight(t) * a;
    Image g(z.rows(), z.cols(), z.channels());
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i)
        gd[i] = w * ((1.0 + s) * ec.data()[i] - s * eu.data()[i] - noise.data()[i]);
    return g;
}

Image lds_grad_image(const Image &z, const Denoiser &eps_adapted, const Denoiser &eps_base, int t, const Image &noise,
                     const NoiseSchedule &schedule, const GuidanceConfig &config) {
    check_schedule_step(schedule, t);
    const double a = schedule.alpha(t);
    const Image zt = noisy_input(z, noise, a, schedule.sigma(t));
    const Image ea = call_denoiser(eps_adapted, zt, t);
    const Image eb = call_denoiser(eps_base, zt, t);
    const double w = config.weight(t) * a;
    Image g(z.rows(), z.cols(), z.channels());
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = w * (ea.data()[i] - eb.data()[i]);
    return g;
}

double strength_schedule(int iteration, int total_iterations, const GuidanceConfig &config) {
    if (total_iterations < 0 || iteration < 0 || iteration > std::max(total_iterations, 0))
        throw InvalidArgument("strength_schedule: iteration out of range");
    if (total_iterations == 0) return config.strength_start;
    return std::lerp(config.strength_start, config.strength_end, static_cast<double>(iteration) / total_iterations);
}

int sample_timestep(int iteration, int total_iterations, std::uint64_t seed, const NoiseSchedule &schedule,
                    const GuidanceConfig &config) {
    const double t_max = strength_schedule(iteration, total_iterations, config);
    auto rng = rng_stream(seed, static_cast<std::uint32_t>(iteration), 0, 0, Purpose::Guidance);
    const double frac = config.t_min + (t_max - config.t_min) * rng.next();
    return std::clamp(static_cast<int>(frac * schedule.steps()), 0, schedule.steps() - 1);
}

std::optional<PixelRect> mask_bbox(const Image &mask) {
    int r0 = mask.rows(), r1 = -1, c0 = mask.cols(), c1 = -1;
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
            if (mask.at(r, c) > 0.0) {
                r0 = std::min(r0, r), r1 = std::max(r1, r);
                c0 = std::min(c0, c), c1 = std::max(c1, c);
            }
    if (r1 < 0) return std::nullopt;
    return PixelRect{r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

PixelRect crop_with_multiple(const PixelRect &bbox, int rows, int cols, double multiple) {
    const int side = static_cast<int>(std::ceil(multiple * std::max(bbox.rows, bbox.cols) - 1e-9));
    auto place = [](int b0, int blen, int extent, int len) {
        len = std::clamp(len, blen, extent);
        int start = static_cast<int>(std::lround(b0 + 0.5 * blen - 0.5 * len));
        start = std::clamp(start, b0 + blen - len, b0);
        start = std::clamp(start, 0, extent - len);
        return std::pair{start, len};
    };
    const auto [r0, nr] = place(bbox.row0, bbox.rows, rows, side);
    const auto [c0, nc] = place(bbox.col0, bbox.cols, cols, side);
    return {r0, c0, nr, nc};
}

PixelRect sample_crop(const Image &mask, int iteration, std::uint64_t seed, const GuidanceConfig &config) {
    const auto bbox = mask_bbox(mask);
    if (!bbox) throw ObjectNotVisible("sample_crop: the object is not visible");
    auto rng = rng_stream(seed, static_cast<std::uint32_t>(iteration), 0, 0, Purpose::Crop);
    const double multiple = config.crop_min + (config.crop_max - config.crop_min) * rng.next();
    return crop_with_multiple(*bbox, mask.rows(), mask.cols(), multiple);
}

Image gaussian_noise(int rows, int cols, int channels, std::uint64_t seed, std::uint32_t iteration) {
    Image img(rows, cols, channels);
    auto rng = rng_stream(seed, iteration, 1, 0, Purpose::Guidance);
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); i += 2) {
        const double u1 = 1.0 - rng.next(), u2 = rng.next();
        const double r = std::sqrt(-2.0 * std::log(u1));
        d[i] = r * std::cos(2.0 * kPi * u2);
        if (i + 1 < d.size()) d[i + 1] = r * std::sin(2.0 * kPi * u2);
    }
    return img;
}

double l1_loss(const Image &a, const Image &b, Image *grad) {
    require_same_shape(a, b, "l1_loss");
    const double n = static_cast<double>(a.size());
    double sum = 0.0;
    if (grad) *grad = Image(a.rows(), a.cols(), a.channels());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += std::abs(d);
        if (grad) grad->data()[i] = (d > 0.0) - (d < 0.0);
    }
    if (grad)
        for (double &g : grad->data()) g /= n;
    return sum / n;
}

namespace {

Image reference_crop(const Image &reference, const GuidanceRequest &req) {
    const PixelRect &r = req.rect;
    if (r.row0 < 0 || r.col0 < 0 || r.rows < 1 || r.cols < 1 || r.row0 + r.rows > reference.rows() ||
        r.col0 + r.cols > reference.cols())
        throw InvalidArgument("guidance: crop rectangle outside the reference image");
    Image c = crop(reference, r);
    if (c.rows() != req.crop.rows() || c.cols() != req.crop.cols()) c = resize_bilinear(c, req.crop.rows(), req.crop.cols());
    return c;
}

}  // namespace

PhotometricOracle::PhotometricOracle(Image reference) : reference_(std::move(reference)) {
    if (reference_.channels() != 3) throw InvalidArgument("PhotometricOracle: reference must be RGB");
}

GuidanceResult PhotometricOracle::guidance(const GuidanceRequest &req) {
    const Image ref = reference_crop(reference_, req);
    GuidanceResult out;
    out.loss = l1_loss(req.crop, ref, &out.grad);
    out.rect = req.rect;
    return out;
}

StubDenoiserProvider::StubDenoiserProvider(Image reference, NoiseSchedule schedule, GuidanceConfig config)
    : reference_(std::move(reference)), schedule_(std::move(schedule)), config_(std::move(config)) {}

GuidanceResult StubDenoiserProvider::guidance(const GuidanceRequest &req) {
    const Image target = reference_crop(reference_, req);
    const Image &x = req.crop;
    auto affine = [this](const Image &x0) {
        return [this, x0](const Image &zt, int t) {
            Image e = zt;
            const double a = schedule_.alpha(t), s = schedule_.sigma(t);
            for (std::size_t i = 0; i < e.size(); ++i) e.data()[i] = (zt.data()[i] - a * x0.data()[i]) / s;
            return e;
        };
    };
    const Image noise = gaussian_noise(x.rows(), x.cols(), x.channels(), req.seed, 0);
    const int t = std::clamp(req.timestep, 0, schedule_.steps() - 1);
    GuidanceResult out;
    out.grad = lds_grad_image(x, affine(target), affine(x), t, noise, schedule_, config_);
    double sq = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x.data()[i] - target.data()[i]) * (x.data()[i] - target.data()[i]);
    out.loss = sq / static_cast<double>(x.size());
    out.rect = req.rect;
    return out;
}

GuidanceResult ZeroProvider::guidance(const GuidanceRequest &req) {
    return {Image(req.crop.rows(), req.crop.cols(), req.crop.channels()), 0.0, req.rect};
}

namespace {

void put_u32(std::string &s, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint32_t get_u32(const std::string &s, std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + k])) << (8 * k);
    return v;
}

}  // namespace

std::string encode_dpg1(const Image &img) {
    std::string out = "DPG1";
    put_u32(out, static_cast<std::uint32_t>(img.rows()));
    put_u32(out, static_cast<std::uint32_t>(img.cols()));
    put_u32(out, static_cast<std::uint32_t>(img.channels()));
    out.reserve(16 + 4 * img.size());
    for (double v : img.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

Image decode_dpg1(const std::string &payload) {
    if (payload.size() < 16 || payload.compare(0, 4, "DPG1") != 0) throw InvalidArgument("DPG1: bad header");
    const std::uint64_t h = get_u32(payload, 4), w = get_u32(payload, 8), c = get_u32(payload, 12);
    if (h == 0 || w == 0 || c == 0 || h * w * c > (1ull << 28)) throw InvalidArgument("DPG1: bad dimensions");
    if (payload.size() != 16 + 4 * h * w * c) throw InvalidArgument("DPG1: payload length does not match header");
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = std::bit_cast<float>(get_u32(payload, 16 + 4 * i));
        if (!std::isfinite(v)) throw InvalidArgument("DPG1: non-finite value");
        img.data()[i] = v;
    }
    return img;
}

std::string format_crop_header(const PixelRect &r) {
    return std::to_string(r.row0) + "," + std::to_string(r.col0) + "," + std::to_string(r.rows) + "," +
           std::to_string(r.cols);
}

std::optional<PixelRect> parse_crop_header(const std::string &value) {
    PixelRect r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream in(value);
    if (!(in >> r.row0 >> c1 >> r.col0 >> c2 >> r.rows >> c3 >> r.cols) || c1 != ',' || c2 != ',' || c3 != ',')
        return std::nullopt;
    return r;
}

}  // namespace dipir
