#include "dipir/optimizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dipir/errors.hpp"
#include "dipir/rng.hpp"

namespace dipir {

const char *mode_name(OptimMode m) {
    switch (m) {
        case OptimMode::Insertion: return "insertion";
        case OptimMode::Material: return "material";
        case OptimMode::ToneAdjust: return "tone";
    }
    return "unknown";
}

OptimMode parse_mode(const std::string &s) {
    if (s == "insertion") return OptimMode::Insertion;
    if (s == "material") return OptimMode::Material;
    if (s == "tone" || s == "tone_adjust") return OptimMode::ToneAdjust;
    throw InvalidArgument("unknown mode '" + s + "'");
}

void OptimConfig::validate() const {
    if (iterations < 0) throw InvalidArgument("OptimConfig: iterations must be >= 0");
    if (lambda_consistency < 0.0 || lambda_reg < 0.0) throw InvalidArgument("OptimConfig: lambdas must be >= 0");
    if (!(lr_sg >= 0.0 && lr_tone >= 0.0 && lr_material >= 0.0))
        throw InvalidArgument("OptimConfig: learning rates must be >= 0");
    if (fusion_start < 0 || fusion_end < fusion_start || (iterations > 0 && fusion_end > iterations))
        throw InvalidArgument("OptimConfig: fusion window must lie within [0, iterations]");
    if (num_lobes < 1) throw InvalidArgument("OptimConfig: need at least one lobe");
    if (env_height < 2 || env_width < 2) throw InvalidArgument("OptimConfig: environment map too small");
    if (!(frozen_fusion >= 0.0 && frozen_fusion <= 1.0)) throw InvalidArgument("OptimConfig: frozen_fusion outside [0, 1]");
    render.validate();
    guidance.validate();
}

double fusion_progress(int iteration, const OptimConfig &config) {
    if (iteration < config.fusion_start) return 0.0;
    if (iteration >= config.fusion_end) return 1.0;
    return static_cast<double>(iteration - config.fusion_start) / (config.fusion_end - config.fusion_start);
}

PipelineParams initial_params(const Scene &scene, const Image &background, const OptimConfig &config) {
    double mean = 0.0;
    for (int r = 0; r < background.rows(); ++r)
        for (int c = 0; c < background.cols(); ++c)
            mean += luminance({background.at(r, c, 0), background.at(r, c, 1), background.at(r, c, 2)});
    mean /= std::max(1, background.rows() * background.cols());
    PipelineParams p;
    p.sg_fg = initial_lighting(config.num_lobes, mean, config.init_sharpness, config.env_height, config.env_width);
    p.sg_shadow = p.sg_fg;
    p.material = scene.material;
    return p;
}

OptimProblem make_problem(const Scene &scene, const Image &background, const PipelineParams &base,
                          const OptimConfig &config) {
    config.validate();
    const RenderSettings &rs = config.render;
    if (background.rows() != rs.rows || background.cols() != rs.cols || background.channels() != 3)
        throw InvalidArgument("optimization: background must be RGB at the render resolution");
    OptimProblem p;
    p.scene = &scene;
    p.background = background;
    p.base = base;
    p.mask = visibility_mask(scene, rs);
    if (!mask_bbox(p.mask)) throw ObjectNotVisible("optimization: the object is not visible from the camera");
    return p;
}

namespace {

bool insertion(const OptimConfig &c) { return c.mode == OptimMode::Insertion; }

ParamVector layout_for(const PipelineParams &params, const OptimConfig &config) {
    const bool material = config.mode == OptimMode::Material;
    return params.pack(material, material && config.optimize_emission);
}

bool segment_active(Segment s, const OptimConfig &config) {
    switch (config.mode) {
        case OptimMode::Insertion:
            return s == Segment::SgFg || s == Segment::SgShadow || s == Segment::ToneFg || s == Segment::ToneShadow;
        case OptimMode::Material: return s == Segment::Material || s == Segment::Emission;
        case OptimMode::ToneAdjust: return s == Segment::ToneFg || s == Segment::ToneShadow;
    }
    return false;
}

double segment_lr(Segment s, const OptimConfig &config) {
    switch (s) {
        case Segment::SgFg:
        case Segment::SgShadow: return config.lr_sg;
        case Segment::ToneFg:
        case Segment::ToneShadow: return config.lr_tone;
        case Segment::Material:
        case Segment::Emission: return config.lr_material;
    }
    return 0.0;
}

void project(ParamVector &p) {
    if (p.has(Segment::Material)) {
        auto m = p.segment(Segment::Material);
        for (int k = 0; k < 4; ++k) m[k] = std::clamp(m[k], 0.0, 1.0);
        m[4] = std::clamp(m[4], MaterialParams::kMinRoughness, 1.0);
    }
    if (p.has(Segment::Emission))
        for (double &e : p.segment(Segment::Emission)) e = std::max(0.0, e);
}

double map_rms_gap(const EnvironmentMap &a, const EnvironmentMap &b) {
    double s = 0.0;
    const auto da = a.image().data(), db = b.image().data();
    for (std::size_t i = 0; i < da.size(); ++i) s += (da[i] - db[i]) * (da[i] - db[i]);
    return std::sqrt(s / static_cast<double>(std::max<std::size_t>(1, da.size())));
}

double current_fusion(int iteration, const OptimConfig &config) {
    return insertion(config) ? fusion_progress(iteration, config) : config.frozen_fusion;
}

}  // namespace

OptimState make_state(const PipelineParams &params, const OptimConfig &config) {
    OptimState st;
    st.params = layout_for(params, config);
    st.m.assign(st.params.size(), 0.0);
    st.v.assign(st.params.size(), 0.0);
    st.fusion = current_fusion(0, config);
    return st;
}

LossGrad total_loss_grad(const OptimState &state, const OptimProblem &problem, const OptimConfig &config,
                         GuidanceProvider &provider) {
    const Scene &scene = *problem.scene;
    const PipelineParams params = problem.base.unpacked(state.params);
    const int it = state.iteration;
    LossGrad out;
    out.grad = state.params.zeros_like();
    IterationDiagnostics &d = out.diag;
    d.iteration = it;
    d.fusion = current_fusion(it, config);

    const PixelRect rect = sample_crop(problem.mask, it, derive_seed(config.seed, 1), config.guidance);
    PipelineConfig pc;
    pc.render = config.render;
    pc.render.region = rect;
    // tone mode reuses one sample set
    pc.render.seed = config.mode == OptimMode::ToneAdjust
                         ? config.render.seed
                         : derive_seed(config.render.seed ^ config.seed, static_cast<std::uint64_t>(it) + 2);
    pc.env_height = config.env_height;
    pc.env_width = config.env_width;
    pc.fusion = d.fusion;
    pc.lighting_grad = insertion(config);
    pc.render_grad = config.mode != OptimMode::ToneAdjust;
    pc.record_tape = insertion(config);

    const PipelineForward fwd = pipeline_forward(scene, problem.background, params, pc);
    d.map_gap = map_rms_gap(fwd.blended.fg, fwd.blended.shadow);

    GuidanceRequest req;
    const int res = config.guidance.crop_resolution;
    req.crop = resize_bilinear(crop(fwd.comp, rect), res, res);
    req.timestep = sample_timestep(it, std::max(config.iterations, it), derive_seed(config.seed, 2), problem.schedule,
                                   config.guidance);
    req.total_steps = problem.schedule.steps();
    req.seed = derive_seed(config.seed, 3 + static_cast<std::uint64_t>(it));
    req.rect = rect;
    req.prompt = config.prompt;
    d.t_used = req.timestep;

    Image reg_fg, reg_shadow;
    MapGradients extra;
    if (insertion(config)) {
        d.reg = cauchy_reg(fwd.map_shadow);
        if (config.lambda_consistency > 0.0) {
            d.consistency = consistency_loss(fwd.map_fg, fwd.map_shadow);
            reg_fg = consistency_loss_vjp(fwd.map_fg, fwd.map_shadow, config.lambda_consistency);
            extra.fg = &reg_fg;
        }
        if (config.lambda_reg > 0.0) {
            reg_shadow = cauchy_reg_vjp(fwd.map_shadow, config.lambda_reg);
            extra.shadow = &reg_shadow;
        }
    }

    Image upstream(fwd.comp.rows(), fwd.comp.cols(), 3);
    try {
        const GuidanceResult g = provider.guidance(req);
        if (!g.grad.same_shape(req.crop)) throw GuidanceUnavailable("guidance: gradient shape mismatch");
        d.lds = g.loss.value_or(0.0);
        const Image g_crop = resize_bilinear_vjp(g.grad, rect.rows, rect.cols);
        for (int r = 0; r < rect.rows; ++r)
            for (int c = 0; c < rect.cols; ++c)
                for (int ch = 0; ch < 3; ++ch) upstream.at(rect.row0 + r, rect.col0 + c, ch) = g_crop.at(r, c, ch);
    } catch (const GuidanceUnavailable &) {
        d.skipped = true;
    }
    if (!d.skipped) {
        out.grad = pipeline_vjp(scene, problem.background, params, pc, fwd, upstream, state.params, extra);
    } else if (extra.fg || extra.shadow) {
        PipelineConfig reg_only = pc;
        reg_only.render_grad = false;
        out.grad = pipeline_vjp(scene, problem.background, params, reg_only, fwd, upstream, state.params, extra);
    }
    d.total = d.lds + config.lambda_consistency * d.consistency + config.lambda_reg * d.reg;

    for (const auto &seg : out.grad.segments())
        if (!segment_active(seg.id, config))
            for (double &g : out.grad.segment(seg.id)) g = 0.0;
    return out;
}

namespace {

// every value finite and every lobe color representable
bool valid_params(const ParamVector &p) {
    for (double x : p.values())
        if (!std::isfinite(x)) return false;
    try {
        SgLightingParams::unflatten(p.segment(Segment::SgFg)).validate();
        SgLightingParams::unflatten(p.segment(Segment::SgShadow)).validate();
    } catch (const InvalidArgument &) {
        return false;
    }
    return true;
}

}  // namespace

bool adam_step(OptimState &state, const ParamVector &grad, const OptimConfig &config) {
    if (!grad.same_layout(state.params)) throw InvalidArgument("adam_step: gradient layout mismatch");
    for (double g : grad.values())
        if (!std::isfinite(g)) {
            ++state.rejected;
            return false;
        }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const int t = state.adam_steps + 1;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    ParamVector next = state.params;
    std::vector<double> m = state.m, v = state.v;
    auto vals = next.values();
    const auto g = grad.values();
    for (const auto &seg : next.segments()) {
        const double lr = segment_lr(seg.id, config);
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            vals[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
    project(next);
    if (!valid_params(next)) {
        ++state.rejected;
        return false;
    }
    state.params = std::move(next);
    state.m = std::move(m);
    state.v = std::move(v);
    state.adam_steps = t;
    return true;
}

PipelineForward render_final(const Scene &scene, const Image &background, const PipelineParams &params,
                             const OptimConfig &config, double fusion) {
    PipelineConfig pc;
    pc.render = config.render;
    pc.render.region.reset();
    pc.env_height = config.env_height;
    pc.env_width = config.env_width;
    pc.fusion = fusion;
    return pipeline_forward(scene, background, params, pc);
}

OptimResult run_optimization(const Scene &scene, const Image &background, const PipelineParams &init,
                             const OptimConfig &config, GuidanceProvider &provider) {
    const OptimProblem problem = make_problem(scene, background, init, config);
    OptimState state = make_state(init, config);
    for (int k = 1; k <= config.iterations; ++k) {
        state.iteration = k;
        state.fusion = current_fusion(k, config);
        LossGrad lg = total_loss_grad(state, problem, config, provider);
        if (lg.diag.skipped) {
            ++state.skipped;
        } else if (!adam_step(state, lg.grad, config)) {
            lg.diag.skipped = true;
        }
        state.diagnostics.push_back(lg.diag);
    }
    state.iteration = config.iterations;
    if (2 * state.skipped > config.iterations)
        throw GuidanceUnavailable("optimization: guidance unavailable for " + std::to_string(state.skipped) + " of " +
                                  std::to_string(config.iterations) + " iterations");
    if (2 * state.rejected > config.iterations)
        throw NumericalFailure("optimization: non-finite gradients in " + std::to_string(state.rejected) + " of " +
                               std::to_string(config.iterations) + " iterations");

    OptimResult out;
    out.params = init.unpacked(state.params);
    const double s_final = current_fusion(config.iterations, config);
    const PipelineForward f = render_final(scene, background, out.params, config, s_final);
    out.fused_map = insertion(config) ? fuse(f.map_fg, f.map_shadow) : f.blended.fg;
    out.composite = f.comp;
    out.outputs = {f.fg.radiance, f.shadow.beta, f.fg.mask, f.comp};
    state.fusion = s_final;
    out.state = std::move(state);
    return out;
}

OptimResult run_optimization(const Scene &scene, const Image &background, const OptimConfig &config,
                             GuidanceProvider &provider) {
    return run_optimization(scene, background, initial_params(scene, background, config), config, provider);
}

OptimResult run_material_mode(const Scene &scene, const Image &background, const PipelineParams &lighting,
                              const OptimConfig &config, GuidanceProvider &provider) {
    OptimConfig c = config;
    c.mode = OptimMode::Material;
    return run_optimization(scene, background, lighting, c, provider);
}

OptimResult run_tone_adjust_mode(const Scene &scene, const Image &background, const PipelineParams &lighting,
                                 const OptimConfig &config, GuidanceProvider &provider) {
    OptimConfig c = config;
    c.mode = OptimMode::ToneAdjust;
    return run_optimization(scene, background, lighting, c, provider);
}

void write_diagnostics_csv(const std::filesystem::path &path, const std::vector<IterationDiagnostics> &diag) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out.precision(17);
    out << "iteration,total,lds,consistency,reg,t_used,skipped\n";
    for (const auto &d : diag)
        out << d.iteration << ',' << d.total << ',' << d.lds << ',' << d.consistency << ',' << d.reg << ','
            << d.t_used << ',' << (d.skipped ? 1 : 0) << '\n';
}

void save_checkpoint(const std::filesystem::path &path, const ParamVector &params, int iteration) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw LoadError("cannot write '" + path.string() + "'");
    for (double v : params.values()) {
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                               static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
        bin.write(bytes, 4);
    }
    nlohmann::json side;
    side["format"] = "float32-le";
    side["iteration"] = iteration;
    side["size"] = params.size();
    for (const auto &s : params.segments())
        side["segments"].push_back({{"name", segment_name(s.id)}, {"offset", s.offset}, {"length", s.length}});
    std::ofstream(path.string() + ".json") << side.dump(2) << '\n';
}

ParamVector load_checkpoint(const std::filesystem::path &path) {
    std::ifstream side_in(path.string() + ".json");
    if (!side_in) throw LoadError("missing checkpoint sidecar '" + path.string() + ".json'");
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(side_in);
    } catch (const nlohmann::json::exception &e) {
        throw LoadError(std::string("checkpoint sidecar: ") + e.what());
    }
    std::size_t lobes = 0;
    bool material = false, emission = false;
    for (const auto &s : side.at("segments")) {
        const std::string name = s.at("name");
        if (name == "sg_fg") lobes = s.at("length").get<std::size_t>() / SgLobe::kNumParams;
        material |= name == "material";
        emission |= name == "emission";
    }
    ParamVector p(lobes, material, emission);
    std::size_t k = 0;
    for (const auto &s : side.at("segments")) {
        if (k >= p.segments().size() || s.at("offset").get<std::size_t>() != p.segments()[k].offset ||
            s.at("length").get<std::size_t>() != p.segments()[k].length)
            throw LoadError("checkpoint sidecar: unexpected segment table");
        ++k;
    }
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw LoadError("cannot read '" + path.string() + "'");
    for (double &v : p.values()) {
        unsigned char b[4];
        if (!bin.read(reinterpret_cast<char *>(b), 4)) throw LoadError("checkpoint: truncated data");
        v = std::bit_cast<float>(static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) |
                                                            (static_cast<std::uint32_t>(b[3]) << 24)));
    }
    return p;
}

}  // namespace dipir
