#include <algorithm>
#include <cmath>
#include <sstream>

#include "dipir/adjoint.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/guidance.hpp"
#include "dipir/rng.hpp"

namespace dipir {

bool GradCheckSuite::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry &e) { return e.report.passed(); });
}

std::string GradCheckSuite::text() const {
    std::ostringstream os;
    for (const auto &e : entries) os << e.report.summary(e.name) << " tol=" << e.tolerance << '\n';
    os << (passed() ? "gradcheck: all passed" : "gradcheck: FAILED") << '\n';
    return os.str();
}

namespace {

constexpr double kComponentTol = 1e-4;
constexpr double kComponentStep = 1e-5;
constexpr double kComponentFloor = 1e-8;

class Draw {
public:
    explicit Draw(std::uint64_t seed, std::uint32_t tag) : rng_(seed, tag, 0, 0, Purpose::Init) {}
    double uniform(double lo, double hi) { return lo + (hi - lo) * rng_.next(); }
    Vec3 unit() {
        const double z = uniform(-1.0, 1.0), phi = uniform(0.0, 2.0 * kPi), r = std::sqrt(1.0 - z * z);
        return {r * std::cos(phi), r * std::sin(phi), z};
    }
    Image image(int rows, int cols, int ch, double lo, double hi) {
        Image img(rows, cols, ch);
        for (double &v : img.data()) v = uniform(lo, hi);
        return img;
    }
    SgLobe lobe(double zmin = -1.0) {
        SgLobe l;
        Vec3 a = unit();
        if (a.z < zmin) a.z = -a.z;
        l.axis_raw = a * uniform(0.8, 1.5);
        l.log_sharpness = std::log(uniform(0.3, 0.8));
        l.log_color = {uniform(-0.5, 1.0), uniform(-0.5, 1.0), uniform(-0.5, 1.0)};
        return l;
    }
    RqSpline spline(double spread) {
        std::vector<double> p(RqSpline::kNumParams);
        const auto id = RqSpline::identity().to_array();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = id[k] + uniform(-spread, spread);
        return RqSpline::from_array(p);
    }

private:
    RngStream rng_;
};

double weighted_sum(const Image &u, const Image &x) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u.data()[i] * x.data()[i];
    return s;
}

Image image_from(std::span<const double> p, int rows, int cols, int ch, std::size_t offset = 0) {
    Image img(rows, cols, ch);
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(offset),
              p.begin() + static_cast<std::ptrdiff_t>(offset + img.size()), img.data().begin());
    return img;
}

std::vector<double> concat(const Image &a, const Image &b) {
    std::vector<double> v(a.data().begin(), a.data().end());
    v.insert(v.end(), b.data().begin(), b.data().end());
    return v;
}

GradCheckEntry component(const std::string &name, const std::function<double(std::span<const double>)> &loss,
                         const std::vector<double> &x, const std::vector<double> &analytic) {
    return {name, kComponentTol, finite_diff_check(loss, x, analytic, kComponentStep, kComponentTol, kComponentFloor)};
}

}  // namespace

GradCheckSuite gradcheck_components(std::uint64_t seed) {
    GradCheckSuite suite;
    constexpr int H = 8, W = 16;

    {
        Draw d(seed, 1);
        const SgLobe lobe = d.lobe();
        const Vec3 v = normalize(lobe.axis() + d.unit() * 0.5);
        const Vec3 w{d.uniform(-1, 1), d.uniform(-1, 1), d.uniform(-1, 1)};
        const auto x = lobe.to_array();
        const auto g = sg_eval_vjp(lobe, v, w);
        suite.entries.push_back(component(
            "sg_eval", [&](std::span<const double> p) { return dot(w, sg_eval(SgLobe::from_array(p), v)); },
            {x.begin(), x.end()}, {g.begin(), g.end()}));
    }
    {
        Draw d(seed, 2);
        SgLightingParams params;
        for (int k = 0; k < 3; ++k) params.lobes.push_back(d.lobe());
        const Image u = d.image(H, W, 3, -1.0, 1.0);
        suite.entries.push_back(component(
            "envmap_bake",
            [&](std::span<const double> p) {
                return weighted_sum(u, envmap_bake(SgLightingParams::unflatten(p), H, W).image());
            },
            params.flatten(), envmap_bake_vjp(params, u)));
    }
    {
        Draw d(seed, 3);
        const EnvironmentMap fg(d.image(H, W, 3, 0.2, 2.0)), shadow(d.image(H, W, 3, 0.2, 2.0));
        const Image g = consistency_loss_vjp(fg, shadow);
        suite.entries.push_back(component(
            "consistency_loss",
            [&](std::span<const double> p) { return consistency_loss(EnvironmentMap(image_from(p, H, W, 3)), shadow); },
            {fg.image().data().begin(), fg.image().data().end()}, {g.data().begin(), g.data().end()}));
        const Image gc = cauchy_reg_vjp(shadow);
        suite.entries.push_back(component(
            "cauchy_reg", [&](std::span<const double> p) { return cauchy_reg(EnvironmentMap(image_from(p, H, W, 3))); },
            {shadow.image().data().begin(), shadow.image().data().end()}, {gc.data().begin(), gc.data().end()}));
    }
    {
        Draw d(seed, 4);
        const EnvironmentMap fg(d.image(H, W, 3, 0.2, 2.0)), shadow(d.image(H, W, 3, 0.2, 2.0));
        const Image u = d.image(H, W, 3, -1.0, 1.0), us = d.image(H, W, 3, -1.0, 1.0);
        const std::size_t n = fg.image().size();
        auto split = [&](std::span<const double> p) {
            return std::pair{EnvironmentMap(image_from(p, H, W, 3)), EnvironmentMap(image_from(p, H, W, 3, n))};
        };
        const MapPairGrad gf = fuse_vjp(fg, shadow, u);
        suite.entries.push_back(component(
            "fuse",
            [&](std::span<const double> p) {
                const auto [a, b] = split(p);
                return weighted_sum(u, fuse(a, b).image());
            },
            concat(fg.image(), shadow.image()), concat(gf.fg, gf.shadow)));
        const double s = 0.4;
        const MapPairGrad gb = blend_scheduled_vjp(fg, shadow, s, u, us);
        suite.entries.push_back(component(
            "blend_scheduled",
            [&](std::span<const double> p) {
                const auto [a, b] = split(p);
                const BlendedMaps m = blend_scheduled(a, b, s);
                return weighted_sum(u, m.fg.image()) + weighted_sum(us, m.shadow.image());
            },
            concat(fg.image(), shadow.image()), concat(gb.fg, gb.shadow)));
    }
    {
        Draw d(seed, 5);
        const RqSpline curve = d.spline(0.6);
        const Image fg = d.image(4, 4, 3, 0.05, 3.0), u = d.image(4, 4, 3, -1.0, 1.0);
        const ToneVjp g = apply_fg_tone_vjp(fg, curve, u);
        const auto cp = curve.to_array();
        suite.entries.push_back(component(
            "fg_tone_params",
            [&](std::span<const double> p) { return weighted_sum(u, apply_fg_tone(fg, RqSpline::from_array(p))); },
            {cp.begin(), cp.end()}, g.d_params));
        suite.entries.push_back(component(
            "fg_tone_input",
            [&](std::span<const double> p) { return weighted_sum(u, apply_fg_tone(image_from(p, 4, 4, 3), curve)); },
            {fg.data().begin(), fg.data().end()}, {g.d_input.data().begin(), g.d_input.data().end()}));
    }
    {
        Draw d(seed, 6);
        const std::array<RqSpline, 3> curves{d.spline(0.6), d.spline(0.6), d.spline(0.6)};
        const Image beta = d.image(4, 4, 3, 0.05, 0.95), u = d.image(4, 4, 3, -1.0, 1.0);
        const ToneVjp g = apply_shadow_tone_vjp(beta, curves, u);
        std::vector<double> x;
        for (const auto &c : curves) {
            const auto a = c.to_array();
            x.insert(x.end(), a.begin(), a.end());
        }
        suite.entries.push_back(component(
            "shadow_tone_params",
            [&](std::span<const double> p) {
                std::array<RqSpline, 3> cs;
                for (int k = 0; k < 3; ++k) cs[k] = RqSpline::from_array(p.subspan(k * RqSpline::kNumParams, RqSpline::kNumParams));
                return weighted_sum(u, apply_shadow_tone(beta, cs));
            },
            x, g.d_params));
        suite.entries.push_back(component(
            "shadow_tone_input",
            [&](std::span<const double> p) { return weighted_sum(u, apply_shadow_tone(image_from(p, 4, 4, 3), curves)); },
            {beta.data().begin(), beta.data().end()}, {g.d_input.data().begin(), g.d_input.data().end()}));
    }
    return suite;
}

GradCheckEntry gradcheck_full_chain(std::uint64_t seed, const FullChainOptions &o) {
    Draw d(seed, 7);
    Scene scene;
    scene.object = make_icosphere({0, 0, 0.5}, 0.5, 2);
    scene.material.base_color = {0.6, 0.5, 0.4};
    scene.material.metallic = 0.3;
    scene.material.roughness = 0.5;
    scene.material.emission = {0.1, 0.05, 0.2};
    scene.camera = Camera::look_at({0.0, -2.2, 1.1}, {0.0, 0.0, 0.4}, {0, 0, 1}, 50.0, o.rows, o.cols);

    PipelineParams params;
    for (int k = 0; k < o.num_lobes; ++k) {
        params.sg_fg.lobes.push_back(d.lobe(0.2));
        params.sg_shadow.lobes.push_back(d.lobe(0.2));
    }
    params.tone.fg = d.spline(0.3);
    for (auto &c : params.tone.shadow) c = d.spline(0.3);
    params.material = scene.material;

    PipelineConfig config;
    config.render.rows = o.rows;
    config.render.cols = o.cols;
    config.render.spp = o.spp;
    config.render.seed = derive_seed(seed, 7);
    config.env_height = o.env_height;
    config.env_width = o.env_width;
    config.fusion = o.fusion;
    const Image background = d.image(o.rows, o.cols, 3, 0.2, 0.8);

    const PipelineForward base = pipeline_forward(scene, background, params, config);
    const SamplingPair sampling = base.sampling;
    const PixelRect rect{1, 1, o.rows - 2, o.cols - 1};
    const int res = 12;
    auto observe = [&](const Image &comp) { return resize_bilinear(crop(comp, rect), res, res); };

    Image reference = observe(base.comp);
    for (double &v : reference.data()) v += (d.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) * d.uniform(0.1, 0.2);

    const ParamVector layout = params.pack(true, true);
    auto loss = [&](std::span<const double> p) {
        ParamVector v = layout;
        std::copy(p.begin(), p.end(), v.values().begin());
        const PipelineForward f = pipeline_forward(scene, background, params.unpacked(v), config, &sampling);
        return l1_loss(observe(f.comp), reference, nullptr);
    };

    Image g_obs;
    l1_loss(observe(base.comp), reference, &g_obs);
    const Image g_crop = resize_bilinear_vjp(g_obs, rect.rows, rect.cols);
    Image upstream(o.rows, o.cols, 3);
    for (int r = 0; r < rect.rows; ++r)
        for (int c = 0; c < rect.cols; ++c)
            for (int ch = 0; ch < 3; ++ch) upstream.at(rect.row0 + r, rect.col0 + c, ch) = g_crop.at(r, c, ch);
    const ParamVector grad = pipeline_vjp(scene, background, params, config, base, upstream, layout);

    return {"full_chain", o.tolerance,
            finite_diff_check(loss, layout.values(), grad.values(), o.h, o.tolerance, o.abs_floor)};
}

GradCheckSuite run_gradcheck(std::uint64_t seed) {
    GradCheckSuite suite = gradcheck_components(seed);
    suite.entries.push_back(gradcheck_full_chain(seed));
    return suite;
}

}  // namespace dipir
