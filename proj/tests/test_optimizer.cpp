#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dipir/errors.hpp"
#include "dipir/evalkit.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/optimizer.hpp"
#include "dipir/parallel.hpp"
#include "dipir/tonemap.hpp"

using namespace dipir;

namespace {

ToySceneConfig small_toy() {
    ToySceneConfig c;
    c.rows = 24;
    c.cols = 36;
    c.env_height = 16;
    c.env_width = 32;
    return c;
}

OptimConfig small_config(int iterations) {
    OptimConfig c;
    c.iterations = iterations;
    c.fusion_start = iterations / 3;
    c.fusion_end = iterations;
    c.num_lobes = 4;
    c.env_height = 16;
    c.env_width = 32;
    c.render.rows = 24;
    c.render.cols = 36;
    c.render.spp = 4;
    c.render.max_depth = 2;
    c.guidance.crop_resolution = 48;
    c.seed = 11;
    return c;
}

class FailingProvider : public GuidanceProvider {
public:
    GuidanceResult guidance(const GuidanceRequest &) override { throw GuidanceUnavailable("offline"); }
    std::string name() const override { return "failing"; }
};

class NanProvider : public GuidanceProvider {
public:
    GuidanceResult guidance(const GuidanceRequest &req) override {
        GuidanceResult r;
        r.grad = Image(req.crop.rows(), req.crop.cols(), 3, std::nan(""));
        r.rect = req.rect;
        return r;
    }
    std::string name() const override { return "nan"; }
};

bool same_params(const PipelineParams &a, const PipelineParams &b) {
    return a.sg_fg.flatten() == b.sg_fg.flatten() && a.sg_shadow.flatten() == b.sg_shadow.flatten() &&
           a.tone.flatten() == b.tone.flatten() && a.material == b.material;
}

}  // namespace

TEST_CASE("fusion progress schedule") {
    OptimConfig c;
    CHECK(fusion_progress(0, c) == 0.0);
    CHECK(fusion_progress(199, c) == 0.0);
    CHECK(fusion_progress(200, c) == 0.0);
    CHECK(fusion_progress(400, c) == 0.5);
    CHECK(fusion_progress(600, c) == 1.0);
    CHECK(fusion_progress(900, c) == 1.0);
    for (int k = 1; k <= 600; ++k) CHECK(fusion_progress(k, c) >= fusion_progress(k - 1, c));
}

TEST_CASE("config validation") {
    OptimConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda_reg = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = OptimConfig{};
    c.fusion_end = 700;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = OptimConfig{};
    c.fusion_start = 300;
    c.fusion_end = 200;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK(parse_mode("tone") == OptimMode::ToneAdjust);
    CHECK(parse_mode("material") == OptimMode::Material);
    CHECK_THROWS_AS(parse_mode("relight"), InvalidArgument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    OptimConfig c;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(3, 0.5, 0.7, 16, 32);
    OptimState st = make_state(p, c);
    const ParamVector before = st.params;
    CHECK(adam_step(st, st.params.zeros_like(), c));
    CHECK(st.params == before);
}

TEST_CASE("adam: first step moves each coordinate by its learning rate") {
    OptimConfig c;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(2, 0.5, 0.7, 16, 32);
    OptimState st = make_state(p, c);
    const ParamVector before = st.params;
    ParamVector g = st.params.zeros_like();
    for (double &v : g.values()) v = 3.0;
    REQUIRE(adam_step(st, g, c));
    for (const auto &seg : st.params.segments()) {
        const double lr = (seg.id == Segment::SgFg || seg.id == Segment::SgShadow) ? c.lr_sg : c.lr_tone;
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i)
            CHECK(before.values()[i] - st.params.values()[i] == doctest::Approx(lr).epsilon(1e-6));
    }
}

TEST_CASE("adam: converges on a 10-d quadratic") {
    OptimConfig c;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(1, 0.5, 0.7, 16, 32);
    OptimState st = make_state(p, c);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> target(10), scale(10);
    for (int i = 0; i < 10; ++i) {
        target[i] = st.params.values()[i] + u(rng);
        scale[i] = 0.5 + 0.5 * (u(rng) + 1.0);
    }
    auto loss = [&] {
        double l = 0;
        for (int i = 0; i < 10; ++i) l += 0.5 * scale[i] * std::pow(st.params.values()[i] - target[i], 2);
        return l;
    };
    for (int k = 0; k < 2000; ++k) {
        ParamVector g = st.params.zeros_like();
        for (int i = 0; i < 10; ++i) g.values()[i] = scale[i] * (st.params.values()[i] - target[i]);
        adam_step(st, g, c);
    }
    CHECK(loss() <= 1e-6);
}

TEST_CASE("adam: non-finite gradient is rejected and counted") {
    OptimConfig c;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(2, 0.5, 0.7, 16, 32);
    OptimState st = make_state(p, c);
    const ParamVector before = st.params;
    ParamVector g = st.params.zeros_like();
    g.values()[3] = INFINITY;
    CHECK_FALSE(adam_step(st, g, c));
    CHECK(st.rejected == 1);
    CHECK(st.adam_steps == 0);
    CHECK(st.params == before);
}

TEST_CASE("adam: a step that overflows the lobes is rejected without side effects") {
    OptimConfig c;
    c.lr_sg = 1e300;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(2, 0.5, 0.7, 16, 32);
    OptimState st = make_state(p, c);
    const OptimState before = st;
    ParamVector g = st.params.zeros_like();
    for (double &v : g.values()) v = -1.0;
    CHECK_FALSE(adam_step(st, g, c));
    CHECK(st.rejected == 1);
    CHECK(st.params == before.params);
    CHECK(st.m == before.m);
    CHECK(st.v == before.v);
    CHECK(st.adam_steps == 0);
}

TEST_CASE("adam: material segment stays in range") {
    OptimConfig c;
    c.mode = OptimMode::Material;
    c.optimize_emission = true;
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(2, 0.5, 0.7, 16, 32);
    p.material.base_color = {0.999, 0.5, 0.001};
    OptimState st = make_state(p, c);
    ParamVector g = st.params.zeros_like();
    auto m = g.segment(Segment::Material);
    m[0] = -1.0;
    m[2] = 1.0;
    m[4] = 1.0;
    auto e = g.segment(Segment::Emission);
    e[0] = 1.0;
    for (int k = 0; k < 200; ++k) adam_step(st, g, c);
    const auto pm = st.params.segment(Segment::Material);
    CHECK(pm[0] == 1.0);
    CHECK(pm[2] == 0.0);
    CHECK(pm[4] == MaterialParams::kMinRoughness);
    CHECK(st.params.segment(Segment::Emission)[0] == 0.0);
}

TEST_CASE("checkpoint round trip and diagnostics csv") {
    const auto dir = std::filesystem::temp_directory_path() / "dipir_test_ckpt";
    std::filesystem::create_directories(dir);
    PipelineParams p;
    p.sg_fg = p.sg_shadow = initial_lighting(3, 0.5, 0.7, 16, 32);
    const ParamVector v = p.pack(true, true);
    save_checkpoint(dir / "state.bin", v, 17);
    CHECK(std::filesystem::file_size(dir / "state.bin") == v.size() * 4);
    const ParamVector back = load_checkpoint(dir / "state.bin");
    REQUIRE(back.same_layout(v));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.values()[i] == static_cast<float>(v.values()[i]));
    std::filesystem::remove(dir / "state.bin.json");
    CHECK_THROWS_AS(load_checkpoint(dir / "state.bin"), LoadError);

    std::vector<IterationDiagnostics> diag(2);
    diag[1].iteration = 2;
    diag[1].skipped = true;
    write_diagnostics_csv(dir / "diag.csv", diag);
    std::ifstream in(dir / "diag.csv");
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "iteration,total,lds,consistency,reg,t_used,skipped");
    CHECK(row2.substr(0, 2) == "2,");
    CHECK(row2.back() == '1');
}

TEST_CASE("total_loss_grad: zero provider and zero lambdas give a zero gradient") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    OptimConfig c = small_config(10);
    c.lambda_consistency = c.lambda_reg = 0.0;
    const PipelineParams init = initial_params(toy.scene, toy.background, c);
    const OptimProblem prob = make_problem(toy.scene, toy.background, init, c);
    OptimState st = make_state(init, c);
    st.iteration = 1;
    ZeroProvider zero;
    const LossGrad lg = total_loss_grad(st, prob, c, zero);
    for (double g : lg.grad.values()) CHECK(g == 0.0);
    CHECK_FALSE(lg.diag.skipped);
}

TEST_CASE("total_loss_grad: Cauchy term vanishes for black shadow lobes") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    OptimConfig c = small_config(10);
    c.lambda_consistency = 0.0;
    PipelineParams init = initial_params(toy.scene, toy.background, c);
    for (auto &l : init.sg_shadow.lobes) l.log_color = Vec3::splat(-1000.0);
    const OptimProblem prob = make_problem(toy.scene, toy.background, init, c);
    OptimState st = make_state(init, c);
    st.iteration = 1;
    ZeroProvider zero;
    const LossGrad lg = total_loss_grad(st, prob, c, zero);
    for (double g : lg.grad.values()) CHECK(g == 0.0);
    CHECK(lg.diag.reg == 0.0);
}

TEST_CASE("total_loss_grad: consistency feeds sg_fg only, Cauchy feeds sg_shadow only") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    OptimConfig c = small_config(10);
    const PipelineParams init = initial_params(toy.scene, toy.background, c);
    PipelineParams p = init;
    for (auto &l : p.sg_shadow.lobes) l.log_color += Vec3{0.3, -0.2, 0.1};
    const OptimProblem prob = make_problem(toy.scene, toy.background, p, c);
    OptimState st = make_state(p, c);
    st.iteration = 1;
    ZeroProvider zero;
    OptimConfig only_consistency = c;
    only_consistency.lambda_reg = 0.0;
    LossGrad lg = total_loss_grad(st, prob, only_consistency, zero);
    double fg = 0, sh = 0;
    for (double g : lg.grad.segment(Segment::SgFg)) fg += std::abs(g);
    for (double g : lg.grad.segment(Segment::SgShadow)) sh += std::abs(g);
    CHECK(fg > 0.0);
    CHECK(sh == 0.0);
    OptimConfig only_reg = c;
    only_reg.lambda_consistency = 0.0;
    lg = total_loss_grad(st, prob, only_reg, zero);
    fg = sh = 0;
    for (double g : lg.grad.segment(Segment::SgFg)) fg += std::abs(g);
    for (double g : lg.grad.segment(Segment::SgShadow)) sh += std::abs(g);
    CHECK(fg == 0.0);
    CHECK(sh > 0.0);
}

TEST_CASE("total_loss_grad: unavailable guidance keeps the regularizer gradient") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    OptimConfig c = small_config(10);
    const PipelineParams init = initial_params(toy.scene, toy.background, c);
    const OptimProblem prob = make_problem(toy.scene, toy.background, init, c);
    OptimState st = make_state(init, c);
    st.iteration = 1;
    FailingProvider failing;
    const LossGrad lg = total_loss_grad(st, prob, c, failing);
    CHECK(lg.diag.skipped);
    double sh = 0;
    for (double g : lg.grad.segment(Segment::SgShadow)) sh += std::abs(g);
    CHECK(sh > 0.0);
    for (double g : lg.grad.segment(Segment::ToneFg)) CHECK(g == 0.0);
}

TEST_CASE("full-chain gradient matches finite differences") {
    const GradCheckEntry e = gradcheck_full_chain(4);
    INFO(e.report.summary(e.name));
    CHECK(e.report.passed());
    double material = 0.0;
    // layout: 4 lobes x 7 twice, tone 64, material 5, emission 3
    for (std::size_t i = 2 * 28 + 64; i < e.report.analytic.size(); ++i) material += std::abs(e.report.analytic[i]);
    CHECK(material > 0.0);
}

TEST_CASE("run_optimization: zero iterations returns the initialization") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    const OptimConfig c = small_config(0);
    const PipelineParams init = initial_params(toy.scene, toy.background, c);
    PhotometricOracle oracle(toy.background);
    const OptimResult r = run_optimization(toy.scene, toy.background, init, c, oracle);
    CHECK(same_params(r.params, init));
    CHECK(r.state.diagnostics.empty());
}

TEST_CASE("run_optimization: zero provider and zero lambdas keep the trajectory constant") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    OptimConfig c = small_config(6);
    c.lambda_consistency = c.lambda_reg = 0.0;
    const PipelineParams init = initial_params(toy.scene, toy.background, c);
    ZeroProvider zero;
    const OptimResult r = run_optimization(toy.scene, toy.background, init, c, zero);
    CHECK(same_params(r.params, init));
    CHECK(r.state.diagnostics.size() == 6);
}

TEST_CASE("run_optimization: fusion closes the map gap at the final iteration") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    const OptimConfig c = small_config(9);
    ZeroProvider zero;
    const OptimResult r = run_optimization(toy.scene, toy.background, c, zero);
    REQUIRE(r.state.diagnostics.size() == 9);
    CHECK(r.state.diagnostics.front().fusion == 0.0);
    double widest = 0.0;
    for (const auto &d : r.state.diagnostics) widest = std::max(widest, d.map_gap);
    CHECK(widest > 0.0);
    CHECK(r.state.diagnostics.back().fusion == 1.0);
    CHECK(r.state.diagnostics.back().map_gap == 0.0);
    for (const auto &d : r.state.diagnostics) {
        CHECK(std::isfinite(d.total));
        CHECK(std::isfinite(d.consistency));
        CHECK(std::isfinite(d.reg));
    }
    CHECK(r.state.fusion == 1.0);
}

TEST_CASE("run_optimization: majority of skipped steps fails") {
    const ToyScene toy = make_toy_scene(3, small_toy());
    const OptimConfig c = small_config(4);
    FailingProvider failing;
    CHECK_THROWS_AS(run_optimization(toy.scene, toy.background, c, failing), GuidanceUnavailable);
    NanProvider nan;
    CHECK_THROWS_AS(run_optimization(toy.scene, toy.background, c, nan), NumericalFailure);
}

TEST_CASE("run_optimization: deterministic across runs and thread counts") {
    const ToyScene toy = make_toy_scene(5, small_toy());
    const OptimConfig c = small_config(5);
    PhotometricOracle oracle(toy.background);
    set_thread_count(1);
    const OptimResult a = run_optimization(toy.scene, toy.background, c, oracle);
    const OptimResult b = run_optimization(toy.scene, toy.background, c, oracle);
    set_thread_count(4);
    const OptimResult d = run_optimization(toy.scene, toy.background, c, oracle);
    set_thread_count(0);
    for (const OptimResult *o : {&b, &d}) {
        CHECK(o->state.params == a.state.params);
        CHECK(o->composite == a.composite);
        REQUIRE(o->state.diagnostics.size() == a.state.diagnostics.size());
        for (std::size_t i = 0; i < a.state.diagnostics.size(); ++i) {
            CHECK(o->state.diagnostics[i].total == a.state.diagnostics[i].total);
            CHECK(o->state.diagnostics[i].t_used == a.state.diagnostics[i].t_used);
        }
    }
}

TEST_CASE("run_optimization: photometric oracle reduces the error") {
    const ToyScene toy = make_toy_scene(6, small_toy());
    BenchmarkConfig bc;
    bc.optim = small_config(120);
    bc.optim.render.spp = 8;
    bc.eval_spp = 32;
    const BenchmarkResult r = synth_benchmark(toy.gt_map, toy.scene, bc, &toy.background);
    CHECK(r.final.rmse < 0.5 * r.initial.rmse);
    CHECK(r.final.si_rmse <= r.final.rmse);
}

TEST_CASE("tone mode: identity target keeps identity curves") {
    const ToyScene toy = make_toy_scene(7, small_toy());
    OptimConfig c = small_config(60);
    c.mode = OptimMode::ToneAdjust;
    PipelineParams lighting;
    lighting.sg_fg = lighting.sg_shadow = toy.gt;
    lighting.material = toy.scene.material;
    const Image target = render_final(toy.scene, toy.background, lighting, c, c.frozen_fusion).comp;
    PhotometricOracle oracle(target);
    const OptimResult r = run_tone_adjust_mode(toy.scene, toy.background, lighting, c, oracle);
    for (int i = 0; i <= 20; ++i) {
        const double x = i / 20.0;
        CHECK(std::abs(rq_spline_eval(r.params.tone.fg, x) - x) <= 1e-3);
        for (const auto &s : r.params.tone.shadow) CHECK(std::abs(rq_spline_eval(s, x) - x) <= 1e-3);
    }
    CHECK(r.params.sg_fg.flatten() == toy.gt.flatten());
}

TEST_CASE("tone mode: recovers a 0.7 foreground gain and stays monotone") {
    const ToyScene toy = make_toy_scene(7, small_toy());
    OptimConfig c = small_config(600);
    c.mode = OptimMode::ToneAdjust;
    PipelineParams lighting;
    lighting.sg_fg = lighting.sg_shadow = toy.gt;
    lighting.material = toy.scene.material;
    const PipelineForward f = render_final(toy.scene, toy.background, lighting, c, c.frozen_fusion);
    Image fg_gain = f.fg_toned;
    for (double &v : fg_gain.data()) v *= 0.7;
    const Image target = composite(toy.background, fg_gain, f.beta_toned, f.fg.mask);
    PhotometricOracle oracle(target);
    const OptimResult r = run_tone_adjust_mode(toy.scene, toy.background, lighting, c, oracle);

    std::vector<double> xs;
    for (int row = 0; row < f.fg.mask.rows(); ++row)
        for (int col = 0; col < f.fg.mask.cols(); ++col)
            if (f.fg.mask.at(row, col) == 1.0)
                for (int ch = 0; ch < 3; ++ch) xs.push_back(reinhard(f.fg.radiance.at(row, col, ch)));
    REQUIRE(xs.size() > 30);
    std::sort(xs.begin(), xs.end());
    const double lo = xs[xs.size() / 10], hi = xs[xs.size() * 9 / 10];
    for (int i = 0; i <= 10; ++i) {
        const double x = lo + (hi - lo) * i / 10.0;
        CHECK(rq_spline_eval(r.params.tone.fg, x) == doctest::Approx(0.7 * x).epsilon(0.05));
    }
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double y = rq_spline_eval(r.params.tone.fg, i / 1000.0);
        CHECK(y >= prev);
        prev = y;
    }
    CHECK(rq_spline_eval(r.params.tone.fg, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rq_spline_eval(r.params.tone.fg, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.params.sg_fg.flatten() == toy.gt.flatten());
}

TEST_CASE("material mode: recovers metallic") {
    const ToyScene toy = make_toy_scene(8, small_toy());
    OptimConfig c = small_config(300);
    c.mode = OptimMode::Material;
    c.render.spp = 8;
    PipelineParams lighting;
    lighting.sg_fg = lighting.sg_shadow = toy.gt;
    Scene truth = toy.scene;
    truth.material.metallic = 0.8;
    truth.material.roughness = 0.3;
    lighting.material = truth.material;
    OptimConfig ref_cfg = c;
    ref_cfg.render.spp = 64;
    const Image target = render_final(truth, toy.background, lighting, ref_cfg, c.frozen_fusion).comp;

    Scene start = truth;
    start.material.metallic = 0.0;
    lighting.material = start.material;
    PhotometricOracle oracle(target);
    const OptimResult r = run_material_mode(start, toy.background, lighting, c, oracle);
    INFO("metallic " << r.params.material.metallic);
    CHECK(std::abs(r.params.material.metallic - 0.8) <= 0.1);
    CHECK(r.params.sg_fg.flatten() == toy.gt.flatten());
    CHECK(r.params.tone.flatten() == ToneParams{}.flatten());
}
