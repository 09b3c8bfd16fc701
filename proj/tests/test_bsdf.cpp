#include <doctest.h>

#include <cmath>
#include <random>

#include "dipir/bsdf.hpp"
#include "dipir/gradcheck.hpp"

using namespace dipir;

namespace {

Vec3 random_hemisphere(std::mt19937_64 &rng, const Vec3 &n) {
    std::normal_distribution<double> g;
    Vec3 v = normalize(Vec3{g(rng), g(rng), g(rng)});
    return dot(v, n) < 0.0 ? -v : v;
}

MaterialParams random_material(std::mt19937_64 &rng, double min_roughness) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MaterialParams m;
    m.base_color = {u(rng), u(rng), u(rng)};
    m.metallic = u(rng);
    m.roughness = min_roughness + (1.0 - min_roughness) * u(rng);
    return m;
}

// Deterministic midpoint quadrature of f(wi) cos over the hemisphere in (cos^2, phi).
Vec3 hemisphere_albedo(const MaterialParams &m, const Vec3 &n, const Vec3 &wo, int res) {
    const Frame frame(n);
    Vec3 sum;
    for (int a = 0; a < res; ++a) {
        const double c2 = (a + 0.5) / res;
        const double ct = std::sqrt(c2), st = std::sqrt(1.0 - c2);
        for (int b = 0; b < 2 * res; ++b) {
            const double phi = kPi * (b + 0.5) / res;
            const Vec3 wi = frame.to_world({st * std::cos(phi), st * std::sin(phi), ct});
            // d(cos^2) dphi = 2 cos sin dtheta dphi, so f cos dw = f / 2 d(cos^2) dphi.
            sum += bsdf_eval(m, n, wi, wo) * 0.5;
        }
    }
    return sum * (1.0 / res) * (kPi / res);
}

}  // namespace

TEST_CASE("white Lambertian evaluates to 1/pi") {
    std::mt19937_64 rng(1);
    const Vec3 n = normalize(Vec3{0.2, -0.3, 1.0});
    const auto m = MaterialParams::lambertian({1, 1, 1});
    for (int k = 0; k < 100; ++k) {
        const Vec3 f = bsdf_eval(m, n, random_hemisphere(rng, n), random_hemisphere(rng, n));
        CHECK(f.x == doctest::Approx(kInvPi).epsilon(1e-12));
        CHECK(f.z == doctest::Approx(kInvPi).epsilon(1e-12));
    }
}

TEST_CASE("below-surface directions give zero") {
    const MaterialParams m;
    const Vec3 n{0, 0, 1};
    CHECK(max_component(bsdf_eval(m, n, {0, 0, 1}, {0, 0.6, -0.8})) == 0.0);
    CHECK(max_component(bsdf_eval(m, n, {0, 0.6, -0.8}, {0, 0, 1})) == 0.0);
    CHECK(bsdf_pdf(m, n, {0, 0.6, -0.8}, {0, 0, 1}) == 0.0);
    CHECK(bsdf_sample(m, n, {0, 0.6, -0.8}, 0.3, 0.3).pdf == 0.0);
}

TEST_CASE("smooth metal has a mirror peak") {
    MaterialParams m;
    m.base_color = {0.9, 0.9, 0.9};
    m.metallic = 1.0;
    m.roughness = 0.02;
    const Vec3 n{0, 0, 1};
    const Vec3 wo = normalize(Vec3{0.5, 0, 1});
    const Vec3 mirror{-wo.x, -wo.y, wo.z};
    const double peak = bsdf_eval(m, n, mirror, wo).x;
    const double off = bsdf_eval(m, n, normalize(Vec3{-0.3, 0.2, 1}), wo).x;
    CHECK(peak > 1e4);
    CHECK(off < 1e-3);
}

TEST_CASE("white furnace: reflected energy never exceeds one") {
    std::mt19937_64 rng(7);
    const Vec3 n{0, 0, 1};
    SUBCASE("deterministic quadrature, moderate roughness") {
        for (int k = 0; k < 20; ++k) {
            MaterialParams m = random_material(rng, 0.2);
            m.base_color = {1, 1, 1};
            const Vec3 wo = random_hemisphere(rng, n);
            if (wo.z < 0.05) continue;
            const Vec3 a = hemisphere_albedo(m, n, wo, 224);  // ~10^5 nodes
            CHECK(max_component(a) <= 1.0 + 1e-2);
        }
    }
    SUBCASE("importance-sampled estimate, full roughness range") {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int k = 0; k < 20; ++k) {
            const MaterialParams m = random_material(rng, MaterialParams::kMinRoughness);
            const Vec3 wo = random_hemisphere(rng, n);
            Vec3 sum;
            const int count = 100000;
            for (int s = 0; s < count; ++s) sum += bsdf_sample(m, n, wo, u(rng), u(rng)).weight;
            CHECK(max_component(sum / count) <= 1.0 + 1e-2);
        }
    }
    SUBCASE("white Lambertian conserves exactly") {
        const Vec3 a = hemisphere_albedo(MaterialParams::lambertian({1, 1, 1}), n, normalize(Vec3{0.3, 0.1, 1}), 200);
        CHECK(a.y == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("sampled pdf agrees with bsdf_pdf") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 n = normalize(Vec3{0.1, 0.4, 1.0});
    int valid = 0;
    for (int k = 0; k < 1000; ++k) {
        const MaterialParams m = random_material(rng, MaterialParams::kMinRoughness);
        const Vec3 wo = random_hemisphere(rng, n);
        const BsdfSample s = bsdf_sample(m, n, wo, u(rng), u(rng));
        if (s.pdf == 0.0) continue;
        ++valid;
        CHECK(std::abs(length(s.wi) - 1.0) < 1e-12);
        const double p = bsdf_pdf(m, n, s.wi, wo);
        CHECK(std::abs(p - s.pdf) <= 1e-5 * p);
        const Vec3 expect = bsdf_eval(m, n, s.wi, wo) * (dot(s.wi, n) / p);
        CHECK(length(expect - s.weight) <= 1e-9 * (1.0 + length(expect)));
    }
    CHECK(valid > 800);
}

TEST_CASE("pdf integrates to at most one") {
    std::mt19937_64 rng(13);
    const Vec3 n{0, 0, 1};
    for (int k = 0; k < 5; ++k) {
        const MaterialParams m = random_material(rng, 0.3);
        const Vec3 wo = normalize(Vec3{0.2, 0.1, 1.0});
        const Frame frame(n);
        const int res = 300;
        double sum = 0.0;
        for (int a = 0; a < res; ++a) {
            const double ct = (a + 0.5) / res, st = std::sqrt(1 - ct * ct);
            for (int b = 0; b < 2 * res; ++b) {
                const double phi = kPi * (b + 0.5) / res;
                sum += bsdf_pdf(m, n, frame.to_world({st * std::cos(phi), st * std::sin(phi), ct}), wo);
            }
        }
        sum *= (1.0 / res) * (kPi / res);
        CHECK(sum <= 1.0 + 1e-3);
        CHECK(sum >= (1.0 - m.metallic) * (1.0 - 1e-3));
    }
}

TEST_CASE("material Jacobian matches finite differences") {
    std::mt19937_64 rng(17);
    const Vec3 n = normalize(Vec3{0.0, 0.2, 1.0});
    for (int k = 0; k < 20; ++k) {
        MaterialParams m = random_material(rng, 0.1);
        m.base_color = m.base_color * 0.8 + Vec3::splat(0.1);
        m.metallic = 0.1 + 0.8 * m.metallic;
        m.roughness = std::min(m.roughness, 0.95);
        const Vec3 wi = random_hemisphere(rng, n), wo = random_hemisphere(rng, n);
        BsdfJacobian jac;
        bsdf_eval_grad(m, n, wi, wo, jac);
        for (int ch = 0; ch < 3; ++ch) {
            auto loss = [&](std::span<const double> p) {
                MaterialParams q = m;
                q.base_color = {p[0], p[1], p[2]};
                q.metallic = p[3];
                q.roughness = p[4];
                return bsdf_eval(q, n, wi, wo)[ch];
            };
            const std::vector<double> params{m.base_color.x, m.base_color.y, m.base_color.z, m.metallic, m.roughness};
            std::vector<double> analytic;
            for (int d = 0; d < kBsdfGradDim; ++d) analytic.push_back(jac[d][ch]);
            const auto report = finite_diff_check(loss, params, analytic, 1e-6, 1e-4, 1e-8);
            CHECK_MESSAGE(report.passed(), report.summary("bsdf"));
        }
    }
}

TEST_CASE("clamped inputs receive no gradient") {
    MaterialParams m;
    m.base_color = {1.5, 0.5, -0.2};
    m.metallic = 0.5;
    m.roughness = 0.01;
    BsdfJacobian jac;
    const Vec3 n{0, 0, 1};
    bsdf_eval_grad(m, n, normalize(Vec3{0.1, 0.2, 1}), normalize(Vec3{-0.1, 0.1, 1}), jac);
    CHECK(length(jac[0]) == 0.0);
    CHECK(length(jac[2]) == 0.0);
    CHECK(length(jac[1]) > 0.0);
    CHECK(length(jac[4]) == 0.0);
}
