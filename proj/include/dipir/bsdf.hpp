#pragma once

#include <array>

#include "dipir/vec.hpp"

namespace dipir {

/// Constant PBR material: Lambertian/GGX blend driven by metallic.
struct MaterialParams {
    static constexpr double kMinRoughness = 0.02;

    Vec3 base_color{0.8, 0.8, 0.8};
    double metallic = 0.0;
    double roughness = 0.5;
    Vec3 emission{};

    /// Copy with every field clamped into its valid range.
    MaterialParams clamped() const;
    /// Pure Lambertian with the given albedo.
    static MaterialParams lambertian(const Vec3 &albedo);
    bool operator==(const MaterialParams &) const = default;
};

struct BsdfSample {
    Vec3 wi;
    double pdf = 0.0;
    Vec3 weight;  // f * cos / pdf; zero when the sample is invalid
};

/// Number of differentiable material inputs of the BSDF: base_color (3), metallic, roughness.
inline constexpr int kBsdfGradDim = 5;

/// df/dparam for each of the kBsdfGradDim inputs (rows) and each color channel.
using BsdfJacobian = std::array<Vec3, kBsdfGradDim>;

/// Reflectance per steradian. Vectors are unit, in world space; normal faces wo.
Vec3 bsdf_eval(const MaterialParams &m, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo);
/// bsdf_eval plus its Jacobian with respect to the (clamped) material inputs.
Vec3 bsdf_eval_grad(const MaterialParams &m, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo, BsdfJacobian &jac);
double bsdf_pdf(const MaterialParams &m, const Vec3 &normal, const Vec3 &wi, const Vec3 &wo);
BsdfSample bsdf_sample(const MaterialParams &m, const Vec3 &normal, const Vec3 &wo, double u1, double u2);

}  // namespace dipir
