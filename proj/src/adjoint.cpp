#include "dipir/adjoint.hpp"

#include <algorithm>

#include "dipir/errors.hpp"

namespace dipir {

const char *segment_name(Segment s) {
    switch (s) {
        case Segment::SgFg: return "sg_fg";
        case Segment::SgShadow: return "sg_shadow";
        case Segment::ToneFg: return "tone_fg";
        case Segment::ToneShadow: return "tone_shadow";
        case Segment::Material: return "material";
        case Segment::Emission: return "emission";
    }
    return "unknown";
}

ParamVector::ParamVector(std::size_t num_lobes, bool with_material, bool with_emission) {
    if (num_lobes == 0) throw InvalidArgument("ParamVector: at least one lobe is required");
    std::size_t offset = 0;
    auto add = [&](Segment id, std::size_t len) {
        segments_.push_back({id, offset, len});
        offset += len;
    };
    add(Segment::SgFg, num_lobes * SgLobe::kNumParams);
    add(Segment::SgShadow, num_lobes * SgLobe::kNumParams);
    add(Segment::ToneFg, RqSpline::kNumParams);
    add(Segment::ToneShadow, 3 * RqSpline::kNumParams);
    if (with_material) add(Segment::Material, kMaterialSegmentSize);
    if (with_emission) add(Segment::Emission, kEmissionSegmentSize);
    values_.assign(offset, 0.0);
}

bool ParamVector::has(Segment s) const {
    return std::any_of(segments_.begin(), segments_.end(), [&](const SegmentInfo &i) { return i.id == s; });
}

const SegmentInfo &ParamVector::info(Segment s) const {
    for (const auto &i : segments_)
        if (i.id == s) return i;
    throw InvalidArgument(std::string("ParamVector: no segment ") + segment_name(s));
}

std::span<double> ParamVector::segment(Segment s) {
    const auto &i = info(s);
    return std::span<double>(values_).subspan(i.offset, i.length);
}

std::span<const double> ParamVector::segment(Segment s) const {
    const auto &i = info(s);
    return std::span<const double>(values_).subspan(i.offset, i.length);
}

ParamVector ParamVector::zeros_like() const {
    ParamVector z = *this;
    std::fill(z.values_.begin(), z.values_.end(), 0.0);
    return z;
}

bool ParamVector::same_layout(const ParamVector &o) const {
    if (segments_.size() != o.segments_.size()) return false;
    for (std::size_t k = 0; k < segments_.size(); ++k)
        if (segments_[k].id != o.segments_[k].id || segments_[k].length != o.segments_[k].length) return false;
    return true;
}

ParamVector PipelineParams::pack(bool with_material, bool with_emission) const {
    if (sg_fg.lobes.size() != sg_shadow.lobes.size())
        throw InvalidArgument("PipelineParams: foreground and shadow lobe counts differ");
    ParamVector v(sg_fg.lobes.size(), with_material, with_emission);
    auto put = [&](Segment s, const std::vector<double> &src) { std::copy(src.begin(), src.end(), v.segment(s).begin()); };
    put(Segment::SgFg, sg_fg.flatten());
    put(Segment::SgShadow, sg_shadow.flatten());
    const auto tone_flat = tone.flatten();
    put(Segment::ToneFg, {tone_flat.begin(), tone_flat.begin() + RqSpline::kNumParams});
    put(Segment::ToneShadow, {tone_flat.begin() + RqSpline::kNumParams, tone_flat.end()});
    if (with_material) {
        put(Segment::Material, {material.base_color.x, material.base_color.y, material.base_color.z,
                                material.metallic, material.roughness});
    }
    if (with_emission) put(Segment::Emission, {material.emission.x, material.emission.y, material.emission.z});
    return v;
}

PipelineParams PipelineParams::unpacked(const ParamVector &v) const {
    PipelineParams p = *this;
    p.sg_fg = SgLightingParams::unflatten(v.segment(Segment::SgFg));
    p.sg_shadow = SgLightingParams::unflatten(v.segment(Segment::SgShadow));
    std::vector<double> tone_flat(v.segment(Segment::ToneFg).begin(), v.segment(Segment::ToneFg).end());
    const auto sh = v.segment(Segment::ToneShadow);
    tone_flat.insert(tone_flat.end(), sh.begin(), sh.end());
    p.tone = ToneParams::unflatten(tone_flat);
    if (v.has(Segment::Material)) {
        const auto m = v.segment(Segment::Material);
        p.material.base_color = {m[0], m[1], m[2]};
        p.material.metallic = m[3];
        p.material.roughness = m[4];
    }
    if (v.has(Segment::Emission)) {
        const auto e = v.segment(Segment::Emission);
        p.material.emission = {e[0], e[1], e[2]};
    }
    return p;
}

namespace {

// The renderer reads the material from the scene; only copy when it differs.
struct SceneWithMaterial {
    std::optional<Scene> copy;
    const Scene *ptr;

    SceneWithMaterial(const Scene &scene, const MaterialParams &m) : ptr(&scene) {
        if (!(scene.material == m)) {
            copy = scene;
            copy->material = m;
            ptr = &*copy;
        }
    }
};

}  // namespace

PipelineForward pipeline_forward(const Scene &scene, const Image &background, const PipelineParams &params,
                                 const PipelineConfig &config, const SamplingPair *sampling) {
    const RenderSettings &rs = config.render;
    rs.validate();
    if (background.rows() != rs.rows || background.cols() != rs.cols || background.channels() != 3)
        throw InvalidArgument("pipeline_forward: background must match the render resolution");
    const SceneWithMaterial sc(scene, params.material);
    PipelineForward f;
    f.map_fg = envmap_bake(params.sg_fg, config.env_height, config.env_width);
    f.map_shadow = envmap_bake(params.sg_shadow, config.env_height, config.env_width);
    f.blended = blend_scheduled(f.map_fg, f.map_shadow, config.fusion);
    if (sampling) {
        f.sampling = *sampling;
    } else {
        f.sampling.fg = SamplingContext::build(f.blended.fg, params.material);
        f.sampling.shadow = SamplingContext::build(f.blended.shadow, params.material);
    }
    f.taped = config.record_tape;
    f.fg = render_foreground(*sc.ptr, f.blended.fg, rs, f.sampling.fg, f.taped ? &f.fg_tape : nullptr);
    f.shadow = render_shadow_ratio(*sc.ptr, f.blended.shadow, rs, f.sampling.shadow, f.taped ? &f.shadow_tape : nullptr);
    f.fg_toned = apply_fg_tone(f.fg.radiance, params.tone.fg);
    f.beta_toned = apply_shadow_tone(f.shadow.beta, params.tone.shadow);
    f.comp = composite(background, f.fg_toned, f.beta_toned, f.fg.mask);
    return f;
}

RenderVjp render_vjp(const Scene &scene, const PipelineForward &forward, const RenderSettings &settings,
                     const Image &upstream_fg, const Image &upstream_beta) {
    RenderVjp out;
    const auto fg = render_foreground_vjp(scene, forward.blended.fg, settings, forward.sampling.fg, upstream_fg);
    out.d_map_fg = fg.light;
    out.material = fg.material;
    out.emission = fg.emission;
    out.d_map_shadow =
        render_shadow_ratio_vjp(scene, forward.blended.shadow, settings, forward.sampling.shadow, upstream_beta);
    return out;
}

void lighting_vjp(const PipelineParams &params, const PipelineForward &forward, double fusion, const Image &d_fg,
                  const Image &d_shadow, ParamVector &grad, MapGradients extra) {
    MapPairGrad pre = blend_scheduled_vjp(forward.map_fg, forward.map_shadow, fusion, d_fg, d_shadow);
    auto fold = [](Image &dst, const Image *src) {
        if (!src) return;
        require_same_shape(dst, *src, "lighting_vjp");
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src->data()[i];
    };
    fold(pre.fg, extra.fg);
    fold(pre.shadow, extra.shadow);
    auto add = [&](Segment s, const std::vector<double> &g) {
        auto dst = grad.segment(s);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    add(Segment::SgFg, envmap_bake_vjp(params.sg_fg, pre.fg));
    add(Segment::SgShadow, envmap_bake_vjp(params.sg_shadow, pre.shadow));
}

ParamVector pipeline_vjp(const Scene &scene, const Image &background, const PipelineParams &params,
                         const PipelineConfig &config, const PipelineForward &f, const Image &upstream,
                         const ParamVector &layout, MapGradients extra) {
    require_same_shape(f.comp, upstream, "pipeline_vjp");
    ParamVector grad = layout.zeros_like();
    const CompositeVjp cv = composite_vjp(background, f.fg_toned, f.beta_toned, f.fg.mask, upstream);
    const ToneVjp tf = apply_fg_tone_vjp(f.fg.radiance, params.tone.fg, cv.d_fg);
    const ToneVjp ts = apply_shadow_tone_vjp(f.shadow.beta, params.tone.shadow, cv.d_beta);
    std::copy(tf.d_params.begin(), tf.d_params.end(), grad.segment(Segment::ToneFg).begin());
    std::copy(ts.d_params.begin(), ts.d_params.end(), grad.segment(Segment::ToneShadow).begin());

    const int h = config.env_height, w = config.env_width;
    if (!config.render_grad) {
        if (config.lighting_grad && (extra.fg || extra.shadow))
            lighting_vjp(params, f, config.fusion, Image(h, w, 3), Image(h, w, 3), grad, extra);
        return grad;
    }
    const bool need_material = grad.has(Segment::Material) || grad.has(Segment::Emission);
    RenderVjp rv;
    if (f.taped && !need_material) {
        if (config.lighting_grad) {
            rv.d_map_fg = foreground_tape_vjp(f.fg_tape, tf.d_input, h, w);
            rv.d_map_shadow = shadow_tape_vjp(f.shadow_tape, ts.d_input, h, w);
        }
    } else {
        const SceneWithMaterial sc(scene, params.material);
        rv = render_vjp(*sc.ptr, f, config.render, tf.d_input, ts.d_input);
    }
    if (config.lighting_grad) lighting_vjp(params, f, config.fusion, rv.d_map_fg, rv.d_map_shadow, grad, extra);
    if (grad.has(Segment::Material)) std::copy(rv.material.begin(), rv.material.end(), grad.segment(Segment::Material).begin());
    if (grad.has(Segment::Emission)) {
        auto e = grad.segment(Segment::Emission);
        e[0] = rv.emission.x;
        e[1] = rv.emission.y;
        e[2] = rv.emission.z;
    }
    return grad;
}

}  // namespace dipir
