#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dipir/bsdf.hpp"
#include "dipir/lightfield.hpp"
#include "dipir/pathtracer.hpp"
#include "dipir/scene.hpp"
#include "dipir/tonemap.hpp"

namespace dipir {

enum class Segment { SgFg, SgShadow, ToneFg, ToneShadow, Material, Emission };

const char *segment_name(Segment s);

struct SegmentInfo {
    Segment id;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const SegmentInfo &) const = default;
};

/// Flat storage of every optimizable scalar, split into named segments.
class ParamVector {
public:
    ParamVector() = default;
    /// Zero-filled vector with the standard segment layout.
    ParamVector(std::size_t num_lobes, bool with_material, bool with_emission);

    std::size_t size() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    const std::vector<SegmentInfo> &segments() const { return segments_; }

    bool has(Segment s) const;
    const SegmentInfo &info(Segment s) const;
    std::span<double> segment(Segment s);
    std::span<const double> segment(Segment s) const;

    /// Same layout, all zeros.
    ParamVector zeros_like() const;
    bool same_layout(const ParamVector &o) const;
    bool operator==(const ParamVector &o) const = default;

private:
    std::vector<double> values_;
    std::vector<SegmentInfo> segments_;
};

/// Structured view of the optimizable state.
struct PipelineParams {
    SgLightingParams sg_fg;
    SgLightingParams sg_shadow;
    ToneParams tone;
    MaterialParams material;

    ParamVector pack(bool with_material, bool with_emission) const;
    /// Segments missing from the vector keep the values in *this.
    PipelineParams unpacked(const ParamVector &v) const;
};

inline constexpr int kMaterialSegmentSize = kBsdfGradDim;
inline constexpr int kEmissionSegmentSize = 3;

struct PipelineConfig {
    RenderSettings render;
    int env_height = 128;
    int env_width = 256;
    double fusion = 0.0;  // scheduled blend s in [0, 1]
    bool lighting_grad = true;  // sg segments
    bool render_grad = true;    // set false to skip the renderer replay entirely
    bool record_tape = false;   // keep light tapes so the lighting gradient needs no replay
};

struct SamplingPair {
    SamplingContext fg;
    SamplingContext shadow;
};

/// Every intermediate of one forward evaluation, kept for the backward pass.
struct PipelineForward {
    EnvironmentMap map_fg;      // baked, pre-blend
    EnvironmentMap map_shadow;  // baked, pre-blend
    BlendedMaps blended;
    SamplingPair sampling;
    ForegroundImage fg;
    ShadowImage shadow;
    Image fg_toned;
    Image beta_toned;
    Image comp;
    bool taped = false;
    ForegroundTape fg_tape;
    ShadowTape shadow_tape;
};

/// bake -> blend -> render -> tone -> composite. Sampling decisions come from
/// `sampling` when given, otherwise from the blended maps themselves.
PipelineForward pipeline_forward(const Scene &scene, const Image &background, const PipelineParams &params,
                                 const PipelineConfig &config, const SamplingPair *sampling = nullptr);

/// Extra gradients on the pre-blend maps (regularizers), folded into the same bake VJP.
struct MapGradients {
    const Image *fg = nullptr;
    const Image *shadow = nullptr;
};

/// Gradient of sum(upstream * comp) with respect to every segment present in `layout`.
ParamVector pipeline_vjp(const Scene &scene, const Image &background, const PipelineParams &params,
                         const PipelineConfig &config, const PipelineForward &forward, const Image &upstream,
                         const ParamVector &layout, MapGradients extra = {});

/// Map-space gradients (post-blend d_fg, d_shadow; pre-blend `extra`) to lobe gradients.
void lighting_vjp(const PipelineParams &params, const PipelineForward &forward, double fusion, const Image &d_fg,
                  const Image &d_shadow, ParamVector &grad, MapGradients extra = {});

/// Renderer-only gradient for upstream on the foreground radiance and the shadow ratio.
struct RenderVjp {
    Image d_map_fg;
    Image d_map_shadow;
    std::array<double, kBsdfGradDim> material{};
    Vec3 emission;
};
RenderVjp render_vjp(const Scene &scene, const PipelineForward &forward, const RenderSettings &settings,
                     const Image &upstream_fg, const Image &upstream_beta);

}  // namespace dipir
