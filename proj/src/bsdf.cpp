#include "dipir/bsdf.hpp"

#include <algorithm>
#include <cmath>

namespace dipir {

namespace {

struct Ggx {
    double alpha;

    double d(double cos_h) const {
        const double a2 = alpha * alpha;
        const double t = cos_h * cos_h * (a2 - 1.0) + 1.0;
        return a2 / (kPi * t * t);
    }
    double dd_dalpha(double cos_h) const {
        const double a2 = alpha * alpha;
        const double c2 = cos_h * cos_h;
        const double t = c2 * (a2 - 1.0) + 1.0;
        return 2.0 * alpha / (kPi * t * t) * (1.0 - 2.0 * a2 * c2 / t);
    }
    double g1(double c) const {
        const double a2 = alpha * alpha;
        return 2.0 * c / (c + std::sqrt(a2 + (1.0 - a2) * c * c));
    }
    double dg1_dalpha(double c) const {
        const double a2 = alpha * alpha;
        const double q = std::sqrt(a2 + (1.0 - a2) * c * c);
        const double dq = alpha * (1.0 - c * c) / q;
        return -2.0 * c / ((c + q) * (c + q)) * dq;
    }
};

double schlick_weight(double cos_d) {
    const double m = std::clamp(1.0 - cos_d, 0.0, 1.0);
    const double m2 = m * m;
    return m2 * m2 * m;
}

Vec3 reflect(const Vec3 &wo, const Vec3 &h) { return h * (2.0 * dot(wo, h)) - wo; }

}  // namespace

MaterialParams MaterialParams::clamped() const {
    auto c01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    MaterialParams m;
    m.base_color = {c01(base_color.x), c01(base_color.y), c01(base_color.z)};
    m.metallic = c01(metallic);
    m.roughness = std::clamp(roughness, kMinRoughness, 1.0);
    m.emission = {std::max(0.0, emission.x), std::max(0.0, emission.y), std::max(0.0, emission.z)};
    return m;
}

MaterialParams MaterialParams::lambertian(const Vec3 &albedo) {
    MaterialParams m;
    m.base_color = albedo;
    m.metallic = 0.0;
    m.roughness = 1.0;
    return m;
}

Vec3 bsdf_eval(const MaterialParams &m, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo) {
    BsdfJacobian unused;
    return bsdf_eval_grad(m, normal, wi, wo, unused);
}

Vec3 bsdf_eval_grad(const MaterialParams &mat, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo,
                    BsdfJacobian &jac) {
    jac.fill(Vec3{});
    const double cos_i = dot(wi, normal), cos_o = dot(wo, normal);
    if (cos_i <= 0.0 || cos_o <= 0.0) return {};
    const MaterialParams m = mat.clamped();
    const Vec3 diffuse = m.base_color * ((1.0 - m.metallic) * kInvPi);
    for (int c = 0; c < 3; ++c) jac[c][c] = (1.0 - m.metallic) * kInvPi;
    jac[3] = m.base_color * -kInvPi;
    if (m.metallic <= 0.0) return diffuse;

    const Vec3 h = normalize(wi + wo);
    const double cos_h = dot(h, normal);
    const double cos_d = std::max(0.0, dot(wi, h));
    const double alpha = m.roughness * m.roughness;
    const Ggx ggx{alpha};
    const double d = ggx.d(cos_h);
    const double g1i = ggx.g1(cos_i), g1o = ggx.g1(cos_o);
    const double dg = d * g1i * g1o / (4.0 * cos_i * cos_o);
    const double fw = schlick_weight(cos_d);
    const Vec3 fresnel = m.base_color + (Vec3::splat(1.0) - m.base_color) * fw;
    const Vec3 specular = fresnel * (m.metallic * dg);

    for (int c = 0; c < 3; ++c) jac[c][c] += m.metallic * (1.0 - fw) * dg;
    jac[3] += fresnel * dg;
    const bool rough_free = mat.roughness > MaterialParams::kMinRoughness && mat.roughness < 1.0;
    if (rough_free) {
        const double ddg_dalpha = (ggx.dd_dalpha(cos_h) * g1i * g1o +
                                   d * (ggx.dg1_dalpha(cos_i) * g1o + g1i * ggx.dg1_dalpha(cos_o))) /
                                  (4.0 * cos_i * cos_o);
        jac[4] = fresnel * (m.metallic * ddg_dalpha * 2.0 * m.roughness);
    }
    // Clamped inputs do not receive gradient.
    for (int c = 0; c < 3; ++c)
        if (mat.base_color[c] < 0.0 || mat.base_color[c] > 1.0) jac[c] = Vec3{};
    if (mat.metallic < 0.0 || mat.metallic > 1.0) jac[3] = Vec3{};
    return diffuse + specular;
}

double bsdf_pdf(const MaterialParams &mat, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo) {
    const double cos_i = dot(wi, normal), cos_o = dot(wo, normal);
    if (cos_i <= 0.0 || cos_o <= 0.0) return 0.0;
    const MaterialParams m = mat.clamped();
    double pdf = (1.0 - m.metallic) * cos_i * kInvPi;
    if (m.metallic > 0.0) {
        const Vec3 h = normalize(wi + wo);
        const Ggx ggx{m.roughness * m.roughness};
        pdf += m.metallic * ggx.d(dot(h, normal)) * dot(h, normal) / (4.0 * std::abs(dot(wo, h)));
    }
    return pdf;
}

BsdfSample bsdf_sample(const MaterialParams &mat, const Vec3 &normal, const Vec3 &wo, double u1, double u2) {
    BsdfSample out;
    if (dot(wo, normal) <= 0.0) return out;
    const MaterialParams m = mat.clamped();
    const Frame frame(normal);
    Vec3 wi;
    if (u1 < m.metallic) {
        u1 = std::min(u1 / m.metallic, std::nextafter(1.0, 0.0));
        const double alpha = m.roughness * m.roughness;
        const double tan2 = alpha * alpha * u1 / (1.0 - u1);
        const double cos_t = 1.0 / std::sqrt(1.0 + tan2);
        const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
        const double phi = 2.0 * kPi * u2;
        const Vec3 h = frame.to_world({sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t});
        wi = reflect(wo, h);
    } else {
        u1 = m.metallic > 0.0 ? std::min((u1 - m.metallic) / (1.0 - m.metallic), std::nextafter(1.0, 0.0)) : u1;
        const double r = std::sqrt(u1), phi = 2.0 * kPi * u2;
        wi = frame.to_world({r * std::cos(phi), r * std::sin(phi), std::sqrt(std::max(0.0, 1.0 - u1))});
    }
    const double cos_i = dot(wi, normal);
    if (cos_i <= 0.0) return out;
    wi = normalize(wi);
    out.wi = wi;
    out.pdf = bsdf_pdf(m, normal, wi, wo);
    if (out.pdf > 0.0) out.weight = bsdf_eval(m, normal, wi, wo) * (dot(wi, normal) / out.pdf);
    return out;
}

}  // namespace dipir
