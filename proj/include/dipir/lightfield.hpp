#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dipir/image.hpp"
#include "dipir/vec.hpp"

namespace dipir {

/// One spherical Gaussian lobe, stored in unconstrained form.
///
/// Radiance along unit direction v is c * exp(-(1 - v.mu) / sigma^2) with
/// c = exp(log_color), mu = axis_raw / |axis_raw| and sigma = exp(log_sharpness)
/// clamped to [kMinSharpness, kMaxSharpness].
struct SgLobe {
    static constexpr int kNumParams = 7;
    static constexpr double kMinSharpness = 1e-3;
    static constexpr double kMaxSharpness = 2.0;

    Vec3 log_color;
    Vec3 axis_raw{0, 0, 1};
    double log_sharpness = 0.0;

    Vec3 color() const;
    Vec3 axis() const;
    double sharpness() const;

    /// Flat layout: log_color (3), axis_raw (3), log_sharpness (1).
    std::array<double, kNumParams> to_array() const;
    static SgLobe from_array(std::span<const double> p);
};

using SgLobeGrad = std::array<double, SgLobe::kNumParams>;

struct SgLightingParams {
    std::vector<SgLobe> lobes;

    std::size_t num_params() const { return lobes.size() * SgLobe::kNumParams; }
    std::vector<double> flatten() const;
    static SgLightingParams unflatten(std::span<const double> flat);
    void validate() const;
};

Vec3 sg_eval(const SgLobe &lobe, const Vec3 &v);

/// Gradient of dot(upstream, sg_eval(lobe, v)) with respect to the lobe's flat parameters.
SgLobeGrad sg_eval_vjp(const SgLobe &lobe, const Vec3 &v, const Vec3 &upstream);

/// Equirectangular direction at the center of pixel (i, j). z is the pole.
Vec3 direction_from_pixel(int i, int j, int height, int width);

/// Pixel containing a unit direction (inverse of direction_from_pixel, up to pixel extent).
std::pair<int, int> pixel_from_direction(const Vec3 &v, int height, int width);

/// Equirectangular linear-radiance map with a cached per-row solid-angle table.
class EnvironmentMap {
public:
    EnvironmentMap() = default;
    EnvironmentMap(int height, int width);
    explicit EnvironmentMap(Image pixels);

    int height() const { return pixels_.rows(); }
    int width() const { return pixels_.cols(); }

    Vec3 pixel(int i, int j) const {
        return {pixels_.at(i, j, 0), pixels_.at(i, j, 1), pixels_.at(i, j, 2)};
    }
    void set_pixel(int i, int j, const Vec3 &c) {
        pixels_.at(i, j, 0) = c.x;
        pixels_.at(i, j, 1) = c.y;
        pixels_.at(i, j, 2) = c.z;
    }
    /// Radiance arriving from direction v (nearest-pixel lookup).
    Vec3 lookup(const Vec3 &v) const;

    double solid_angle(int i) const { return solid_angle_[static_cast<std::size_t>(i)]; }
    double solid_angle(int i, int /*j*/) const { return solid_angle(i); }
    /// Polar-angle cosine bounds of row i: {cos(theta_top), cos(theta_bottom)}.
    std::pair<double, double> row_cos_bounds(int i) const;

    const Image &image() const { return pixels_; }
    Image &image() { return pixels_; }

    bool same_shape(const EnvironmentMap &o) const { return pixels_.same_shape(o.pixels_); }

private:
    void build_solid_angles();

    Image pixels_;
    std::vector<double> solid_angle_;
};

/// Sum of the per-pixel solid angles over the full map.
double total_solid_angle(const EnvironmentMap &map);

EnvironmentMap envmap_bake(const SgLightingParams &params, int height, int width);

/// Gradient of sum(upstream * envmap_bake(params)) with respect to params.flatten().
std::vector<double> envmap_bake_vjp(const SgLightingParams &params, const Image &upstream);

struct EnvSample {
    Vec3 direction;
    double pdf = 0.0;  // per steradian
    std::size_t texel = 0;  // row * width + col of the map pixel containing direction
};

/// Luminance-proportional importance sampler over an environment map.
/// A pixel is chosen with probability proportional to luminance * solid angle,
/// then a direction uniformly within the pixel's solid angle.
class EnvSampler {
public:
    EnvSampler() = default;
    explicit EnvSampler(const EnvironmentMap &map);

    EnvSample sample(double u1, double u2) const;
    double pdf(const Vec3 &direction) const;
    double texel_pdf(std::size_t texel) const { return density_[texel]; }
    int height() const { return height_; }
    int width() const { return width_; }

private:
    int height_ = 0, width_ = 0;
    std::vector<double> row_cdf_;   // height + 1
    std::vector<double> col_cdf_;   // height * (width + 1)
    std::vector<double> density_;   // per-pixel pdf per steradian
    std::vector<std::pair<double, double>> cos_bounds_;
};

/// Per-pixel Rec.709 luminance divided by its solid-angle weighted total.
Image normalized_luminance(const EnvironmentMap &map);

/// Cross-entropy between normalized luminance distributions, -sum Ls log(Lfg) dOmega.
/// Only the foreground map receives gradient.
double consistency_loss(const EnvironmentMap &fg, const EnvironmentMap &shadow);
Image consistency_loss_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, double upstream = 1.0);

/// Cauchy penalty sum log(1 + 2 L^2) dOmega over pixels and channels.
double cauchy_reg(const EnvironmentMap &shadow);
Image cauchy_reg_vjp(const EnvironmentMap &shadow, double upstream = 1.0);

/// Luminance-adjusted fusion of the two maps; keeps the chroma of the foreground map.
EnvironmentMap fuse(const EnvironmentMap &fg, const EnvironmentMap &shadow);

struct MapPairGrad {
    Image fg;
    Image shadow;
};
MapPairGrad fuse_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, const Image &upstream);

struct BlendedMaps {
    EnvironmentMap fg;
    EnvironmentMap shadow;
};
BlendedMaps blend_scheduled(const EnvironmentMap &fg, const EnvironmentMap &shadow, double s);
MapPairGrad blend_scheduled_vjp(const EnvironmentMap &fg, const EnvironmentMap &shadow, double s,
                                const Image &upstream_fg, const Image &upstream_shadow);

/// Fibonacci-sphere lobe layout with a gray color chosen so that the baked
/// map's solid-angle weighted mean luminance equals target_mean_luminance.
SgLightingParams initial_lighting(int num_lobes, double target_mean_luminance, double sharpness = 0.7,
                                  int height = 128, int width = 256);

}  // namespace dipir
