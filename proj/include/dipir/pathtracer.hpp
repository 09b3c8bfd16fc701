#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dipir/bsdf.hpp"
#include "dipir/image.hpp"
#include "dipir/lightfield.hpp"
#include "dipir/scene.hpp"

namespace dipir {

struct RenderSettings {
    int spp = 128;
    int mis_rays = 4;   // emitter and BSDF samples per vertex, each
    int max_depth = 3;  // foreground path vertices; the shadow ratio always uses one
    int rows = 256;
    int cols = 384;
    std::uint64_t seed = 0;
    /// Restricts work to a pixel rectangle; pixels outside hold the "empty" value
    /// (zero radiance, zero mask, unit shadow ratio). Stream keys use global pixel
    /// indices, so the pixels inside are identical to a full render.
    std::optional<PixelRect> region;

    void validate() const;
};

/// Sampling decisions are made from this snapshot rather than from the live
/// parameters, which keeps the estimator a smooth function of the lighting
/// and material (detached sampling).
struct SamplingContext {
    std::optional<EnvSampler> emitter;  // absent for an all-black map
    MaterialParams material;

    static SamplingContext build(const EnvironmentMap &map, const MaterialParams &material);
};

struct ForegroundImage {
    Image radiance;  // rows x cols x 3, zero where the object is not hit
    Image mask;      // rows x cols x 1, fraction of primary samples hitting the object
};

struct ShadowImage {
    Image beta;              // rows x cols x 3
    long floored_pixels = 0; // pixels forced to 1 because the unoccluded estimate was ~0
};

/// Sparse record of the map lookups made by a forward render. With a fixed
/// SamplingContext both estimators are linear in the map, so the lighting VJP is
/// a scatter over the recorded weights instead of a replay.
struct ForegroundTape {
    struct Entry {
        std::uint32_t pixel;        // row * cols + col
        std::uint32_t light_index;  // offset of the texel's first channel in the map data
        Vec3 weight;                // radiance(pixel) += weight * L[texel]
    };
    std::vector<Entry> entries;
};

struct ShadowTape {
    struct Term {
        std::uint32_t light_index;
        double coeff;
        bool visible;
    };
    struct Pixel {
        std::uint32_t pixel;
        std::uint32_t first, count;  // range in terms
        Vec3 den;
        Vec3 beta;
    };
    std::vector<Pixel> pixels;  // pixels with a non-floored ratio
    std::vector<Term> terms;
};

struct RenderOutputs {
    Image fg;
    Image beta;
    Image mask;
    Image comp;
};

/// Balance heuristic a / (a + b).
double mis_weight(double pdf_a, double pdf_b);

ForegroundImage render_foreground(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings);
ForegroundImage render_foreground(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings,
                                  const SamplingContext &ctx, ForegroundTape *tape = nullptr);

ShadowImage render_shadow_ratio(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings);
ShadowImage render_shadow_ratio(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings,
                                const SamplingContext &ctx, ShadowTape *tape = nullptr);

/// Per-pixel fraction of primary samples that hit the object.
Image visibility_mask(const Scene &scene, const RenderSettings &settings);

/// (1 - V) * beta * bg + V * fg, per pixel and channel.
Image composite(const Image &background, const Image &fg_toned, const Image &beta_toned, const Image &mask);

struct CompositeVjp {
    Image d_background;
    Image d_fg;
    Image d_beta;
};
CompositeVjp composite_vjp(const Image &background, const Image &fg_toned, const Image &beta_toned,
                           const Image &mask, const Image &upstream);

struct ForegroundGrad {
    Image light;                                // gradient on the environment-map pixels
    std::array<double, kBsdfGradDim> material{};  // base_color rgb, metallic, roughness
    Vec3 emission;
};

/// Replays the forward sample set and returns d(sum(upstream * radiance)) with
/// respect to the map pixels and the material. Pixels with zero upstream are skipped.
ForegroundGrad render_foreground_vjp(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings,
                                     const SamplingContext &ctx, const Image &upstream);

/// Gradient of sum(upstream * beta) with respect to the map pixels.
Image render_shadow_ratio_vjp(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings,
                              const SamplingContext &ctx, const Image &upstream);

/// Lighting VJPs from recorded tapes; equal to the replayed map gradients.
Image foreground_tape_vjp(const ForegroundTape &tape, const Image &upstream, int map_height, int map_width);
Image shadow_tape_vjp(const ShadowTape &tape, const Image &upstream, int map_height, int map_width);

}  // namespace dipir
