#include "dipir/lightfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dipir/errors.hpp"
#include "dipir/parallel.hpp"

namespace dipir {

namespace {

constexpr double kLogFloor = 1e-8;
constexpr double kLuminanceFloor = 1e-8;

void require_unit(const Vec3 &v, const char *what) {
    if (!isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite direction");
    if (std::abs(length(v) - 1.0) > 1e-6) throw InvalidArgument(std::string(what) + ": direction is not unit length");
}

// Direction table for an equirectangular grid, split per row / per column.
struct DirectionTable {
    std::vector<double> sin_theta, cos_theta, cos_phi, sin_phi;

    DirectionTable(int height, int width)
        : sin_theta(height), cos_theta(height), cos_phi(width), sin_phi(width) {
        for (int i = 0; i < height; ++i) {
            const double theta = kPi * (i + 0.5) / height;
            sin_theta[i] = std::sin(theta);
            cos_theta[i] = std::cos(theta);
        }
        for (int j = 0; j < width; ++j) {
            const double phi = 2.0 * kPi * (j + 0.5) / width;
            cos_phi[j] = std::cos(phi);
            sin_phi[j] = std::sin(phi);
        }
    }
    Vec3 operator()(int i, int j) const {
        return {sin_theta[i] * cos_phi[j], sin_theta[i] * sin_phi[j], cos_theta[i]};
    }
};

struct LobeCache {
    Vec3 color, axis;
    double inv_sigma2;
};

LobeCache cache_lobe(const SgLobe &lobe) {
    const double sigma = lobe.sharpness();
    return {lobe.color(), lobe.axis(), 1.0 / (sigma * sigma)};
}

void require_same_maps(const EnvironmentMap &a, const EnvironmentMap &b, const char *what) {
    if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": environment map shape mismatch");
}

Image luminance_grid(const EnvironmentMap &map) {
    Image y(map.height(), map.width(), 1);
    for (int i = 0; i < map.height(); ++i)
        for (int j = 0; j < map.width(); ++j) y.at(i, j) = luminance(map.pixel(i, j));
    return y;
}

double weighted_total(const EnvironmentMap &map, const Image &grid) {
    double total = 0.0;
    for (int i = 0; i < map.height(); ++i) {
        double row = 0.0;
        for (int j = 0; j < map.width(); ++j) row += grid.at(i, j);
        total += row * map.solid_angle(i);
    }
    return total;
}

}  // namespace

Vec3 SgLobe::color() const {
    return {std::exp(log_color.x), std::exp(log_color.y), std::exp(log_color.z)};
}

Vec3 SgLobe::axis() const {
    const double len = length(axis_raw);
    if (!(len > 0.0) || !std::isfinite(len)) throw InvalidArgument("SgLobe: degenerate axis");
    return axis_raw / len;
}

double SgLobe::sharpness() const {
    return std::clamp(std::exp(log_sharpness), kMinSharpness, kMaxSharpness);
}

std::array<double, SgLobe::kNumParams> SgLobe::to_array() const {
    return {log_color.x, log_color.y, log_color.z, axis_raw.x, axis_raw.y, axis_raw.z, log_sharpness};
}

SgLobe SgLobe::from_array(std::span<const double> p) {
    if (p.size() < kNumParams) throw InvalidArgument("SgLobe::from_array: need 7 values");
    SgLobe lobe;
    lobe.log_color = {p[0], p[1], p[2]};
    lobe.axis_raw = {p[3], p[4], p[5]};
    lobe.log_sharpness = p[6];
    return lobe;
}

std::vector<double> SgLightingParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(num_params());
    for (const auto &lobe : lobes) {
        const auto a = lobe.to_array();
        flat.insert(flat.end(), a.begin(), a.end());
    }
    return flat;
}

SgLightingParams SgLightingParams::unflatten(std::span<const double> flat) {
    if (flat.empty() || flat.size() % SgLobe::kNumParams != 0)
        throw InvalidArgument("SgLightingParams::unflatten: size is not a positive multiple of 7");
    SgLightingParams params;
    for (std::size_t k = 0; k < flat.size(); k += SgLobe::kNumParams)
        params.lobes.push_back(SgLobe::from_array(flat.subspan(k, SgLobe::kNumParams)));
    return params;
}

void SgLightingParams::validate() const {
    if (lobes.empty()) throw InvalidArgument("SgLightingParams: at least one lobe is required");
    for (const auto &lobe : lobes) {
        if (!isfinite(lobe.color())) throw InvalidArgument("SgLightingParams: non-finite lobe color");
        (void)lobe.axis();
        if (!std::isfinite(lobe.log_sharpness)) throw InvalidArgument("SgLightingParams: non-finite sharpness");
    }
}

Vec3 sg_eval(const SgLobe &lobe, const Vec3 &v) {
    require_unit(v, "sg_eval");
    const double sigma = lobe.sharpness();
    return lobe.color() * std::exp(-(1.0 - dot(v, lobe.axis())) / (sigma * sigma));
}

SgLobeGrad sg_eval_vjp(const SgLobe &lobe, const Vec3 &v, const Vec3 &upstream) {
    require_unit(v, "sg_eval_vjp");
    const Vec3 c = lobe.color();
    const double len = length(lobe.axis_raw);
    const Vec3 mu = lobe.axis_raw / len;
    const double raw_sigma = std::exp(lobe.log_sharpness);
    const double sigma = std::clamp(raw_sigma, SgLobe::kMinSharpness, SgLobe::kMaxSharpness);
    const double e = (dot(v, mu) - 1.0) / (sigma * sigma);
    const double w = std::exp(e);

    SgLobeGrad g{};
    double s = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        g[ch] = upstream[ch] * c[ch] * w;
        s += g[ch];
    }
    // d/dmu of exp((v.mu - 1)/sigma^2) is v/sigma^2; project through mu = a/|a|.
    const Vec3 dmu = v * (s / (sigma * sigma));
    const Vec3 da = (dmu - mu * dot(mu, dmu)) / len;
    g[3] = da.x;
    g[4] = da.y;
    g[5] = da.z;
    const bool clamped = raw_sigma < SgLobe::kMinSharpness || raw_sigma > SgLobe::kMaxSharpness;
    g[6] = clamped ? 0.0 : s * (-2.0 * e);
    return g;
}

Vec3 direction_from_pixel(int i, int j, int height, int width) {
    if (height <= 0 || width <= 0 || i < 0 || i >= height || j < 0 || j >= width)
        throw InvalidArgument("direction_from_pixel: index out of range");
    const double theta = kPi * (i + 0.5) / height;
    const double phi = 2.0 * kPi * (j + 0.5) / width;
    const double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

std::pair<int, int> pixel_from_direction(const Vec3 &v, int height, int width) {
    const double theta = std::acos(std::clamp(v.z, -1.0, 1.0));
    double phi = std::atan2(v.y, v.x);
    if (phi < 0.0) phi += 2.0 * kPi;
    const int i = std::clamp(static_cast<int>(theta * (height / kPi)), 0, height - 1);
    const int j = std::clamp(static_cast<int>(phi * (width / (2.0 * kPi))), 0, width - 1);
    return {i, j};
}

EnvironmentMap::EnvironmentMap(int height, int width) : pixels_(height, width, 3) {
    if (height < 2 || width < 2) throw InvalidArgument("EnvironmentMap: need at least 2x2 pixels");
    build_solid_angles();
}

EnvironmentMap::EnvironmentMap(Image pixels) : pixels_(std::move(pixels)) {
    if (pixels_.channels() != 3) throw InvalidArgument("EnvironmentMap: expected 3 channels");
    if (pixels_.rows() < 2 || pixels_.cols() < 2) throw InvalidArgument("EnvironmentMap: need at least 2x2 pixels");
    for (double x : pixels_.data())
        if (!std::isfinite(x) || x < 0.0) throw InvalidArgument("EnvironmentMap: radiance must be finite and >= 0");
    build_solid_angles();
}

void EnvironmentMap::build_solid_angles() {
    solid_angle_.resize(static_cast<std::size_t>(height()));
    const double dphi = 2.0 * kPi / width();
    for (int i = 0; i < height(); ++i) {
        const auto [top, bottom] = row_cos_bounds(i);
        solid_angle_[i] = (top - bottom) * dphi;
    }
}

std::pair<double, double> EnvironmentMap::row_cos_bounds(int i) const {
    return {std::cos(kPi * i / height()), std::cos(kPi * (i + 1) / height())};
}

Vec3 EnvironmentMap::lookup(const Vec3 &v) const {
    const auto [i, j] = pixel_from_direction(v, height(), width());
    return pixel(i, j);
}

double total_solid_angle(const EnvironmentMap &map) {
    double total = 0.0;
    for (int i = 0; i < map.height(); ++i) total += map.solid_angle(i) * map.width();
    return total;
}

EnvironmentMap envmap_bake(const SgLightingParams &params, int height, int width) {
    params.validate();
    EnvironmentMap map(height, width);
    const DirectionTable dirs(height, width);
    std::vector<LobeCache> lobes;
    lobes.reserve(params.lobes.size());
    for (const auto &lobe : params.lobes) lobes.push_back(cache_lobe(lobe));

    parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
        const int i = static_cast<int>(row);
        for (int j = 0; j < width; ++j) {
            const Vec3 v = dirs(i, j);
            Vec3 sum;
            for (const auto &l : lobes) sum += l.color * std::exp((dot(v, l.axis) - 1.0) * l.inv_sigma2);
            map.set_pixel(i, j, sum);
        }
    });
    return map;
}

std::vector<double> envmap_bake_vjp(const SgLightingParams &params, const Image &upstream) {
    params.validate();
    if (upstream.channels() != 3) throw InvalidArgument("envmap_bake_vjp: upstream must have 3 channels");
    const int height = upstream.rows(), width = upstream.cols();
    const DirectionTable dirs(height, width);
    std::vector<double> grad(params.num_params(), 0.0);

    parallel_for(params.lobes.size(), [&](std::size_t k) {
        const SgLobe &lobe = params.lobes[k];
        const LobeCache l = cache_lobe(lobe);
        Vec3 dcolor, dmu;
        double dsharp = 0.0;
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const Vec3 v = dirs(i, j);
                const double e = (dot(v, l.axis) - 1.0) * l.inv_sigma2;
                const double w = std::exp(e);
                const Vec3 g{upstream.at(i, j, 0), upstream.at(i, j, 1), upstream.at(i, j, 2)};
                const Vec3 gc = g * l.color * w;
                const double s = gc.x + gc.y + gc.z;
                dcolor += gc;
                dmu += v * (s * l.inv_sigma2);
                dsharp += s * (-2.0 * e);
            }
        }
        const double len = length(lobe.axis_raw);
        const Vec3 da = (dmu - l.axis * dot(l.axis, dmu)) / len;
        const double raw_sigma = std::exp(lobe.log_sharpness);
        const bool clamped = raw_sigma < SgLobe::kMinSharpness || raw_sigma > SgLobe::kMaxSharpness;
        double *out = grad.data() + k * SgLobe::kNumParams;
        out[0] = dcolor.x;
        out[1] = dcolor.y;
        out[2] = dcolor.z;
        out[3] = da.x;
        out[4] = da.y;
        out[5] = da.z;
        out[6] = clamped ? 0.0 : dsharp;
    });
    return grad;
}

EnvSampler::EnvSampler(const EnvironmentMap &map) : height_(map.height()), width_(map.width()) {
    const Image lum = luminance_grid(map);
    row_cdf_.assign(static_cast<std::size_t>(height_) + 1, 0.0);
    col_cdf_.assign(static_cast<std::size_t>(height_) * (width_ + 1), 0.0);
    density_.assign(static_cast<std::size_t>(height_) * width_, 0.0);
    cos_bounds_.resize(static_cast<std::size_t>(height_));

    double total = 0.0;
    for (int i = 0; i < height_; ++i) {
        cos_bounds_[i] = map.row_cos_bounds(i);
        double *cdf = col_cdf_.data() + static_cast<std::size_t>(i) * (width_ + 1);
        for (int j = 0; j < width_; ++j) cdf[j + 1] = cdf[j] + lum.at(i, j);
        const double row_sum = cdf[width_];
        if (row_sum > 0.0) {
            for (int j = 1; j < width_; ++j) cdf[j] /= row_sum;
        } else {
            for (int j = 1; j < width_; ++j) cdf[j] = static_cast<double>(j) / width_;
        }
        cdf[width_] = 1.0;
        row_cdf_[i + 1] = row_cdf_[i] + row_sum * map.solid_angle(i);
    }
    total = row_cdf_[height_];
    if (!(total > 0.0) || !std::isfinite(total))
        throw DegenerateDistribution("EnvSampler: environment map has zero luminance");
    for (int i = 1; i < height_; ++i) row_cdf_[i] /= total;
    row_cdf_[height_] = 1.0;
    for (int i = 0; i < height_; ++i)
        for (int j = 0; j < width_; ++j) density_[static_cast<std::size_t>(i) * width_ + j] = lum.at(i, j) / total;
}

namespace {

// Inverts a normalized CDF: returns the bin and the position within it.
std::pair<int, double> invert_cdf(const double *cdf, int n, double u) {
    const int k = std::clamp(static_cast<int>(std::upper_bound(cdf, cdf + n + 1, u) - cdf) - 1, 0, n - 1);
    const double width = cdf[k + 1] - cdf[k];
    double frac = width > 0.0 ? (u - cdf[k]) / width : 0.5;
    frac = std::clamp(frac, 0.0, std::nextafter(1.0, 0.0));
    return {k, frac};
}

}  // namespace

EnvSample EnvSampler::sample(double u1, double u2) const {
    const auto [i, fr] = invert_cdf(row_cdf_.data(), height_, u1);
    const auto [j, fc] = invert_cdf(col_cdf_.data() + static_cast<std::size_t>(i) * (width_ + 1), width_, u2);
    const auto [top, bottom] = cos_bounds_[i];
    const double cos_theta = top - fr * (top - bottom);
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double phi = 2.0 * kPi * (j + fc) / width_;
    const Vec3 dir{sin_theta * std::cos(phi), sin_theta * std::sin(phi), cos_theta};
    const auto [pi, pj] = pixel_from_direction(dir, height_, width_);
    const std::size_t texel = static_cast<std::size_t>(pi) * width_ + pj;
    return {dir, density_[texel], texel};
}

double EnvSampler::pdf(const Vec3 &direction) const {
    const auto [i, j] = pixel_from_direction(direction, height_, width_);
    return density_[static_cast<std::size_t>(i) * width_ + j];
}

Image normalized_luminance(const EnvironmentMap &map) {
    Image y = luminance_grid(map);
    const double total = weighted_total(map, y);
    if (!(total > 0.0)) throw DegenerateDistribution("normalized_luminance: map has zero luminance");
    for (double &v : y.data()) v /= total;
    return y;
}

double consistency_loss(const EnvironmentMap &fg, const EnvironmentMap &shadow) {
    require_same_maps(fg, shadow, "consistency_loss");
    const Image pf = normalized_luminance(fg);
    const Image ps = normalized_luminance(shadow);
    double loss = 0.0;
    for (int i = 0; i < fg.height(); ++i) {
        double row = 0.0;
        for (int j = 0; j < fg.width(); ++j) row -= ps.at(i, j) * std::log(std::max(pf.at(i, j), kLogFloor));
        loss += row * fg.solid_angle(i);
    }
    return loss;
}

Image consistency_loss_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, double upstream) {
    require_same_maps(fg, shadow, "consistency_loss_vjp");
    const Image y = luminance_grid(fg);
    const double total = weighted_total(fg, y);
    if (!(total > 0.0)) throw DegenerateDistribution("consistency_loss_vjp: foreground map has zero luminance");
    const Image ps = normalized_luminance(shadow);

    // Gradient with respect to the normalized foreground distribution.
    Image gp(fg.height(), fg.width(), 1);
    double proj = 0.0;
    for (int i = 0; i < fg.height(); ++i) {
        for (int j = 0; j < fg.width(); ++j) {
            const double p = y.at(i, j) / total;
            if (p > kLogFloor) gp.at(i, j) = -upstream * ps.at(i, j) * fg.solid_angle(i) / p;
            proj += gp.at(i, j) * y.at(i, j);
        }
    }
    proj /= total * total;

    Image grad(fg.height(), fg.width(), 3);
    for (int i = 0; i < fg.height(); ++i) {
        for (int j = 0; j < fg.width(); ++j) {
            const double gy = gp.at(i, j) / total - proj * fg.solid_angle(i);
            for (int ch = 0; ch < 3; ++ch) grad.at(i, j, ch) = gy * kLuminanceWeights[ch];
        }
    }
    return grad;
}

double cauchy_reg(const EnvironmentMap &shadow) {
    double loss = 0.0;
    for (int i = 0; i < shadow.height(); ++i) {
        double row = 0.0;
        for (int j = 0; j < shadow.width(); ++j)
            for (int ch = 0; ch < 3; ++ch) {
                const double l = shadow.image().at(i, j, ch);
                row += std::log1p(2.0 * l * l);
            }
        loss += row * shadow.solid_angle(i);
    }
    return loss;
}

Image cauchy_reg_vjp(const EnvironmentMap &shadow, double upstream) {
    Image grad(shadow.height(), shadow.width(), 3);
    for (int i = 0; i < shadow.height(); ++i)
        for (int j = 0; j < shadow.width(); ++j)
            for (int ch = 0; ch < 3; ++ch) {
                const double l = shadow.image().at(i, j, ch);
                grad.at(i, j, ch) = upstream * shadow.solid_angle(i) * 4.0 * l / (1.0 + 2.0 * l * l);
            }
    return grad;
}

namespace {

struct FusionTerms {
    Image a, b;  // floored foreground luminance, shadow luminance
    double max_a = 0.0;
    int argmax = 0;
};

FusionTerms fusion_terms(const EnvironmentMap &fg, const EnvironmentMap &shadow) {
    FusionTerms t{luminance_grid(fg), luminance_grid(shadow)};
    t.max_a = -std::numeric_limits<double>::infinity();
    const auto n = static_cast<int>(t.a.size());
    for (int k = 0; k < n; ++k) {
        double &a = t.a.storage()[k];
        a = std::max(a, kLuminanceFloor);
        if (a > t.max_a) {
            t.max_a = a;
            t.argmax = k;
        }
    }
    return t;
}

}  // namespace

EnvironmentMap fuse(const EnvironmentMap &fg, const EnvironmentMap &shadow) {
    require_same_maps(fg, shadow, "fuse");
    const FusionTerms t = fusion_terms(fg, shadow);
    EnvironmentMap out = fg;
    for (int i = 0; i < fg.height(); ++i) {
        for (int j = 0; j < fg.width(); ++j) {
            const double a = t.a.at(i, j), b = t.b.at(i, j);
            const double r = (a / t.max_a) * (b / (a + b));
            const double fused = a + r * (b - a);
            out.set_pixel(i, j, fg.pixel(i, j) * (fused / a));
        }
    }
    return out;
}

MapPairGrad fuse_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, const Image &upstream) {
    require_same_maps(fg, shadow, "fuse_vjp");
    if (!upstream.same_shape(fg.image())) throw InvalidArgument("fuse_vjp: upstream shape mismatch");
    const FusionTerms t = fusion_terms(fg, shadow);
    const double m = t.max_a;
    MapPairGrad g{Image(fg.height(), fg.width(), 3), Image(fg.height(), fg.width(), 3)};
    double grad_max = 0.0;
    for (int i = 0; i < fg.height(); ++i) {
        for (int j = 0; j < fg.width(); ++j) {
            const double a = t.a.at(i, j), b = t.b.at(i, j);
            const double s = a + b;
            const double r = (a / m) * (b / s);
            const double fused = a + r * (b - a);
            const Vec3 lf = fg.pixel(i, j);
            const Vec3 u{upstream.at(i, j, 0), upstream.at(i, j, 1), upstream.at(i, j, 2)};
            const double q = dot(u, lf);
            const double g_fused = q / a;
            double g_a = -q * fused / (a * a);
            const double dr_da = b * b / (m * s * s);
            const double dr_db = a * a / (m * s * s);
            g_a += g_fused * (1.0 - r + (b - a) * dr_da);
            const double g_b = g_fused * (r + (b - a) * dr_db);
            grad_max += g_fused * (b - a) * (-r / m);
            const bool floored = luminance(lf) < kLuminanceFloor;
            for (int ch = 0; ch < 3; ++ch) {
                g.fg.at(i, j, ch) = u[ch] * fused / a + (floored ? 0.0 : g_a * kLuminanceWeights[ch]);
                g.shadow.at(i, j, ch) = g_b * kLuminanceWeights[ch];
            }
        }
    }
    if (m > kLuminanceFloor) {
        const int i = t.argmax / fg.width(), j = t.argmax % fg.width();
        for (int ch = 0; ch < 3; ++ch) g.fg.at(i, j, ch) += grad_max * kLuminanceWeights[ch];
    }
    return g;
}

BlendedMaps blend_scheduled(const EnvironmentMap &fg, const EnvironmentMap &shadow, double s) {
    require_same_maps(fg, shadow, "blend_scheduled");
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("blend_scheduled: s must lie in [0, 1]");
    if (s == 0.0) return {fg, shadow};
    const EnvironmentMap fused = fuse(fg, shadow);
    BlendedMaps out{fg, shadow};
    auto &pf = out.fg.image().storage();
    auto &ps = out.shadow.image().storage();
    const auto &pu = fused.image().storage();
    for (std::size_t k = 0; k < pu.size(); ++k) {
        pf[k] = std::lerp(pf[k], pu[k], s);
        ps[k] = std::lerp(ps[k], pu[k], s);
    }
    return out;
}

MapPairGrad blend_scheduled_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, double s,
                                const Image &upstream_fg, const Image &upstream_shadow) {
    require_same_maps(fg, shadow, "blend_scheduled_vjp");
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("blend_scheduled_vjp: s must lie in [0, 1]");
    if (!upstream_fg.same_shape(fg.image()) || !upstream_shadow.same_shape(fg.image()))
        throw InvalidArgument("blend_scheduled_vjp: upstream shape mismatch");
    MapPairGrad g{upstream_fg, upstream_shadow};
    if (s == 0.0) return g;
    Image to_fused(fg.height(), fg.width(), 3);
    for (std::size_t k = 0; k < to_fused.size(); ++k) {
        to_fused.storage()[k] = s * (upstream_fg.storage()[k] + upstream_shadow.storage()[k]);
        g.fg.storage()[k] *= 1.0 - s;
        g.shadow.storage()[k] *= 1.0 - s;
    }
    const MapPairGrad gf = fuse_vjp(fg, shadow, to_fused);
    for (std::size_t k = 0; k < to_fused.size(); ++k) {
        g.fg.storage()[k] += gf.fg.storage()[k];
        g.shadow.storage()[k] += gf.shadow.storage()[k];
    }
    return g;
}

SgLightingParams initial_lighting(int num_lobes, double target_mean_luminance, double sharpness, int height,
                                  int width) {
    if (num_lobes < 1) throw InvalidArgument("initial_lighting: need at least one lobe");
    if (!(sharpness > 0.0)) throw InvalidArgument("initial_lighting: sharpness must be positive");
    const double golden_angle = kPi * (3.0 - std::sqrt(5.0));
    SgLightingParams params;
    for (int k = 0; k < num_lobes; ++k) {
        const double z = 1.0 - (2.0 * k + 1.0) / num_lobes;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * k;
        SgLobe lobe;
        lobe.axis_raw = {r * std::cos(phi), r * std::sin(phi), z};
        lobe.log_sharpness = std::log(sharpness);
        params.lobes.push_back(lobe);
    }
    const EnvironmentMap unit = envmap_bake(params, height, width);
    const Image y = luminance_grid(unit);
    const double mean = weighted_total(unit, y) / total_solid_angle(unit);
    const double gray = std::max(target_mean_luminance, 1e-6) / mean;
    for (auto &lobe : params.lobes) lobe.log_color = Vec3::splat(std::log(gray));
    return params;
}

}  // namespace dipir
