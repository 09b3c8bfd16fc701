#include <doctest.h>

#include <cmath>
#include <random>

#include "dipir/errors.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/tonemap.hpp"

using namespace dipir;

namespace {

RqSpline random_spline(std::mt19937_64 &rng, double scale = 1.5) {
    std::normal_distribution<double> n(0.0, scale);
    std::array<double, RqSpline::kNumParams> p{};
    for (double &v : p) v = n(rng);
    return RqSpline::from_array(p);
}

Image random_image(std::mt19937_64 &rng, int h, int w, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(h, w, 3);
    for (double &v : img.storage()) v = u(rng);
    return img;
}

double dot_images(const Image &a, const Image &b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.storage()[k] * b.storage()[k];
    return s;
}

}  // namespace

TEST_CASE("reinhard") {
    CHECK(reinhard(0.0) == 0.0);
    CHECK(reinhard(1.0) == 0.5);
    CHECK(reinhard(3.0) == 0.75);
    CHECK_THROWS_AS(reinhard(-0.1), InvalidArgument);
}

TEST_CASE("identity spline") {
    const RqSplineEval f(RqSpline::identity());
    for (int k = 0; k < 100; ++k) {
        const double x = k / 99.0;
        CHECK(std::abs(f(x) - x) <= 1e-6);
        CHECK(f.derivative(x) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("spline endpoints, monotonicity and knot continuity") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const RqSpline s = random_spline(rng);
        const RqSplineEval f(s);
        CHECK(f(0.0) == 0.0);
        CHECK(f(1.0) == 1.0);
        double prev = f(0.0);
        for (int k = 1; k <= 10000; ++k) {
            const double y = f(k * 1e-4);
            REQUIRE(y > prev);
            prev = y;
        }
        for (int k = 1; k < RqSpline::kBins; ++k) {
            const double xk = f.knots_x()[k];
            const double left = f.derivative(std::nextafter(xk, 0.0));
            const double right = f.derivative(xk);
            CHECK(left == doctest::Approx(right).epsilon(1e-6));
            CHECK(f(xk) == doctest::Approx(f.knots_y()[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("spline inverse by bisection") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const RqSpline s = random_spline(rng);
        for (int k = 0; k <= 50; ++k) {
            const double x = k / 50.0;
            CHECK(std::abs(rq_spline_inverse(s, rq_spline_eval(s, x)) - x) < 1e-6);
        }
    }
}

TEST_CASE("spline derivative and parameter gradient match central differences") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 20; ++trial) {
        const RqSpline s = random_spline(rng, 1.0);
        const double x = u(rng);
        const RqSplineEval f(s);
        const double fd = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6;
        CHECK(f.derivative(x) == doctest::Approx(fd).epsilon(1e-6));

        RqSplineEval acc(s);
        double dfdx = 0.0;
        acc.eval_accumulate(x, 1.0, &dfdx);
        CHECK(dfdx == doctest::Approx(f.derivative(x)).epsilon(1e-10));
        const auto g = acc.finalize_grad();
        const auto p = s.to_array();
        auto loss = [&](std::span<const double> q) { return rq_spline_eval(RqSpline::from_array(q), x); };
        const auto report = finite_diff_check(loss, p, g, 1e-5, 1e-4, 1e-9);
        CHECK_MESSAGE(report.passed(), report.summary("spline"));
    }
}

TEST_CASE("tone application") {
    std::mt19937_64 rng(24);
    const Image hdr = random_image(rng, 5, 7, 0.0, 6.0);
    const Image toned = apply_fg_tone(hdr, RqSpline::identity());
    for (std::size_t k = 0; k < hdr.size(); ++k)
        CHECK(std::abs(toned.storage()[k] - reinhard(hdr.storage()[k])) <= 1e-6);

    const Image beta = random_image(rng, 5, 7, 0.0, 1.0);
    const std::array<RqSpline, 3> ident{RqSpline::identity(), RqSpline::identity(), RqSpline::identity()};
    const Image bt = apply_shadow_tone(beta, ident);
    for (std::size_t k = 0; k < beta.size(); ++k) CHECK(std::abs(bt.storage()[k] - beta.storage()[k]) <= 1e-6);

    const std::array<RqSpline, 3> curves{random_spline(rng), random_spline(rng), random_spline(rng)};
    const Image ones = apply_shadow_tone(Image(5, 7, 3, 1.0), curves);
    for (double v : ones.data()) CHECK(v == 1.0);
    const Image bright = apply_shadow_tone(Image(2, 2, 3, 1.25), curves);
    for (double v : bright.data()) CHECK(v == 1.25);

    const Image fg_toned = apply_fg_tone(hdr, curves[0]);
    for (double v : fg_toned.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("tone VJPs match central differences") {
    std::mt19937_64 rng(25);
    const Image hdr = random_image(rng, 3, 4, 0.05, 5.0);
    Image beta = random_image(rng, 3, 4, 0.02, 0.98);
    beta.at(1, 1, 0) = 1.4;  // pass-through branch
    const Image up = random_image(rng, 3, 4, -1.0, 1.0);
    const RqSpline fg_curve = random_spline(rng, 0.8);
    const std::array<RqSpline, 3> sh{random_spline(rng, 0.8), random_spline(rng, 0.8), random_spline(rng, 0.8)};

    {
        const ToneVjp g = apply_fg_tone_vjp(hdr, fg_curve, up);
        auto by_input = [&](std::span<const double> x) {
            Image img(3, 4, 3);
            std::copy(x.begin(), x.end(), img.storage().begin());
            return dot_images(apply_fg_tone(img, fg_curve), up);
        };
        auto r1 = finite_diff_check(by_input, hdr.storage(), g.d_input.storage(), 1e-6, 1e-4, 1e-9);
        CHECK_MESSAGE(r1.passed(), r1.summary("fg tone input"));
        auto by_params = [&](std::span<const double> p) {
            return dot_images(apply_fg_tone(hdr, RqSpline::from_array(p)), up);
        };
        auto r2 = finite_diff_check(by_params, fg_curve.to_array(), g.d_params, 1e-5, 1e-4, 1e-9);
        CHECK_MESSAGE(r2.passed(), r2.summary("fg tone params"));
    }
    {
        const ToneVjp g = apply_shadow_tone_vjp(beta, sh, up);
        auto by_input = [&](std::span<const double> x) {
            Image img(3, 4, 3);
            std::copy(x.begin(), x.end(), img.storage().begin());
            return dot_images(apply_shadow_tone(img, sh), up);
        };
        auto r1 = finite_diff_check(by_input, beta.storage(), g.d_input.storage(), 1e-6, 1e-4, 1e-9);
        CHECK_MESSAGE(r1.passed(), r1.summary("shadow tone input"));
        ToneParams tp;
        tp.shadow = sh;
        const auto flat = tp.flatten();
        std::vector<double> sh_flat(flat.begin() + RqSpline::kNumParams, flat.end());
        auto by_params = [&](std::span<const double> p) {
            std::vector<double> all(flat.begin(), flat.begin() + RqSpline::kNumParams);
            all.insert(all.end(), p.begin(), p.end());
            return dot_images(apply_shadow_tone(beta, ToneParams::unflatten(all).shadow), up);
        };
        auto r2 = finite_diff_check(by_params, sh_flat, g.d_params, 1e-5, 1e-4, 1e-9);
        CHECK_MESSAGE(r2.passed(), r2.summary("shadow tone params"));
    }
}

TEST_CASE("gamma codec") {
    CHECK(srgb_encode(0.0) == 0);
    CHECK(srgb_encode(1.0) == 255);
    CHECK(srgb_encode(0.5) == 186);
    CHECK(srgb_encode(-3.0) == 0);
    CHECK(srgb_encode(7.0) == 255);
    for (int code = 0; code < 256; ++code) CHECK(srgb_encode(srgb_decode(static_cast<std::uint8_t>(code))) == code);
    for (int k = 0; k <= 1000; ++k) {
        const double x = k / 1000.0;
        const double code = srgb_encode(x);
        // Round trip measured in the encoded domain stays within one code.
        CHECK(std::abs(code / 255.0 - std::pow(srgb_decode(srgb_encode(x)), 1 / 2.2)) <= 1.0 / 255.0);
        CHECK(std::abs(code / 255.0 - std::pow(x, 1 / 2.2)) <= 0.5 / 255.0 + 1e-12);
        // In linear space the decode slope (at most 2.2) stretches half a code.
        CHECK(std::abs(srgb_decode(srgb_encode(x)) - x) <= 1.1 / 255.0 + 1e-12);
    }
}

TEST_CASE("ToneParams flatten round trip") {
    std::mt19937_64 rng(26);
    ToneParams t;
    t.fg = random_spline(rng);
    for (auto &s : t.shadow) s = random_spline(rng);
    const auto flat = t.flatten();
    CHECK(flat.size() == ToneParams::kNumParams);
    CHECK(ToneParams::unflatten(flat).flatten() == flat);
}
