#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dipir/image.hpp"

namespace dipir {

/// x / (1 + x). Throws InvalidArgument for negative input.
double reinhard(double x);

/// Monotone rational-quadratic spline on [0, 1] with pinned endpoints.
///
/// Bin widths and heights come from a softmax over unconstrained logits (with a
/// minimum bin size), knot derivatives from a softplus (with a minimum slope).
/// All parameters are unconstrained, so any real vector is a valid spline.
struct RqSpline {
    static constexpr int kBins = 5;
    static constexpr int kNumParams = 3 * kBins + 1;
    static constexpr double kMinBin = 1e-3;
    static constexpr double kMinDerivative = 1e-3;

    std::array<double, kBins> raw_widths{};
    std::array<double, kBins> raw_heights{};
    std::array<double, kBins + 1> raw_derivatives{};

    /// Parameters giving f(x) = x.
    static RqSpline identity();

    std::array<double, kNumParams> to_array() const;
    static RqSpline from_array(std::span<const double> p);
};

using RqSplineGrad = std::array<double, RqSpline::kNumParams>;

/// Knot layout of a spline, ready for repeated evaluation.
class RqSplineEval {
public:
    explicit RqSplineEval(const RqSpline &spline);

    /// f(x) for x in [0, 1]; inputs outside are clamped.
    double operator()(double x) const;
    /// df/dx.
    double derivative(double x) const;
    /// f(x), accumulating upstream * df/dparams into an internal knot-space buffer
    /// that finalize_grad() maps back to the raw parameters.
    double eval_accumulate(double x, double upstream, double *dfdx = nullptr);
    RqSplineGrad finalize_grad() const;

    const std::array<double, RqSpline::kBins + 1> &knots_x() const { return xs_; }
    const std::array<double, RqSpline::kBins + 1> &knots_y() const { return ys_; }
    const std::array<double, RqSpline::kBins + 1> &knot_derivatives() const { return ds_; }

private:
    static constexpr int K = RqSpline::kBins;

    int bin_of(double x) const;

    RqSpline raw_;
    std::array<double, K> widths_{}, heights_{}, width_probs_{}, height_probs_{};
    std::array<double, K + 1> xs_{}, ys_{}, ds_{};
    std::array<double, K> gw_{}, gh_{};
    std::array<double, K + 1> gd_{};
};

double rq_spline_eval(const RqSpline &spline, double x);

/// Numerical inverse by bisection.
double rq_spline_inverse(const RqSpline &spline, double y, double tol = 1e-12);

struct ToneParams {
    static constexpr int kNumParams = 4 * RqSpline::kNumParams;

    RqSpline fg = RqSpline::identity();
    std::array<RqSpline, 3> shadow{RqSpline::identity(), RqSpline::identity(), RqSpline::identity()};

    /// Flat layout: fg (16), shadow R, G, B (16 each).
    std::vector<double> flatten() const;
    static ToneParams unflatten(std::span<const double> flat);
};

/// spline_fg(reinhard(I_fg)) per channel with one shared curve.
Image apply_fg_tone(const Image &fg, const RqSpline &curve);

/// Per-channel curve on clamp(beta, 0, 1); ratios above 1 pass through.
Image apply_shadow_tone(const Image &beta, const std::array<RqSpline, 3> &curves);

struct ToneVjp {
    Image d_input;
    std::vector<double> d_params;
};

ToneVjp apply_fg_tone_vjp(const Image &fg, const RqSpline &curve, const Image &upstream);
ToneVjp apply_shadow_tone_vjp(const Image &beta, const std::array<RqSpline, 3> &curves, const Image &upstream);

inline constexpr double kDisplayGamma = 2.2;

/// Pure power-law encode to 8 bits after clamping to [0, 1].
std::uint8_t srgb_encode(double linear);
double srgb_decode(std::uint8_t code);

}  // namespace dipir
