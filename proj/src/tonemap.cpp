#include "dipir/tonemap.hpp"

#include <algorithm>
#include <cmath>

#include "dipir/errors.hpp"

namespace dipir {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <std::size_t N>
std::array<double, N> softmax(const std::array<double, N> &logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::array<double, N> p{};
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) sum += (p[i] = std::exp(logits[i] - m));
    for (auto &v : p) v /= sum;
    return p;
}

// Maps a gradient on softmax-derived bin sizes back to the logits.
template <std::size_t N>
void softmax_backward(const std::array<double, N> &probs, const std::array<double, N> &g_sizes, double scale,
                      double *out) {
    double mean = 0.0;
    for (std::size_t m = 0; m < N; ++m) mean += g_sizes[m] * probs[m];
    for (std::size_t n = 0; n < N; ++n) out[n] = scale * probs[n] * (g_sizes[n] - mean);
}

}  // namespace

double reinhard(double x) {
    if (!(x >= 0.0)) throw InvalidArgument("reinhard: input must be non-negative");
    return x / (1.0 + x);
}

RqSpline RqSpline::identity() {
    RqSpline s;
    s.raw_derivatives.fill(std::log(std::expm1(1.0 - kMinDerivative)));
    return s;
}

std::array<double, RqSpline::kNumParams> RqSpline::to_array() const {
    std::array<double, kNumParams> a{};
    std::copy(raw_widths.begin(), raw_widths.end(), a.begin());
    std::copy(raw_heights.begin(), raw_heights.end(), a.begin() + kBins);
    std::copy(raw_derivatives.begin(), raw_derivatives.end(), a.begin() + 2 * kBins);
    return a;
}

RqSpline RqSpline::from_array(std::span<const double> p) {
    if (p.size() < static_cast<std::size_t>(kNumParams)) throw InvalidArgument("RqSpline::from_array: too few values");
    RqSpline s;
    std::copy_n(p.begin(), kBins, s.raw_widths.begin());
    std::copy_n(p.begin() + kBins, kBins, s.raw_heights.begin());
    std::copy_n(p.begin() + 2 * kBins, kBins + 1, s.raw_derivatives.begin());
    return s;
}

RqSplineEval::RqSplineEval(const RqSpline &spline) : raw_(spline) {
    width_probs_ = softmax(spline.raw_widths);
    height_probs_ = softmax(spline.raw_heights);
    const double scale = 1.0 - K * RqSpline::kMinBin;
    for (int k = 0; k < K; ++k) {
        widths_[k] = RqSpline::kMinBin + scale * width_probs_[k];
        heights_[k] = RqSpline::kMinBin + scale * height_probs_[k];
        xs_[k + 1] = xs_[k] + widths_[k];
        ys_[k + 1] = ys_[k] + heights_[k];
    }
    xs_[K] = 1.0;
    ys_[K] = 1.0;
    for (int k = 0; k <= K; ++k) ds_[k] = RqSpline::kMinDerivative + softplus(spline.raw_derivatives[k]);
}

int RqSplineEval::bin_of(double x) const {
    int k = 0;
    while (k < K - 1 && x >= xs_[k + 1]) ++k;
    return k;
}

double RqSplineEval::operator()(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    if (x >= 1.0) return 1.0;
    const int k = bin_of(x);
    const double w = widths_[k], h = heights_[k], s = h / w;
    const double xi = (x - xs_[k]) / w;
    const double q = xi * (1.0 - xi);
    const double num = h * (s * xi * xi + ds_[k] * q);
    const double den = s + (ds_[k + 1] + ds_[k] - 2.0 * s) * q;
    return ys_[k] + num / den;
}

double RqSplineEval::derivative(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    const int k = bin_of(x);
    const double w = widths_[k], h = heights_[k], s = h / w;
    const double xi = std::min((x - xs_[k]) / w, 1.0);
    const double q = xi * (1.0 - xi);
    const double den = s + (ds_[k + 1] + ds_[k] - 2.0 * s) * q;
    const double numer = ds_[k + 1] * xi * xi + 2.0 * s * q + ds_[k] * (1.0 - xi) * (1.0 - xi);
    return s * s * numer / (den * den);
}

double RqSplineEval::eval_accumulate(double x, double upstream, double *dfdx) {
    x = std::clamp(x, 0.0, 1.0);
    if (x >= 1.0) {
        if (dfdx) *dfdx = ds_[K];
        return 1.0;
    }
    const int k = bin_of(x);
    const double w = widths_[k], h = heights_[k], s = h / w;
    const double dk = ds_[k], dk1 = ds_[k + 1];
    const double xi = (x - xs_[k]) / w;
    const double q = xi * (1.0 - xi);
    const double a = s * xi * xi + dk * q;
    const double num = h * a;
    const double c = dk1 + dk - 2.0 * s;
    const double den = s + c * q;
    const double f = ys_[k] + num / den;
    const double nd2 = num / (den * den);

    const double f_h = a / den;
    const double f_s = h * xi * xi / den - nd2 * (1.0 - 2.0 * q);
    const double f_dk = h * q / den - nd2 * q;
    const double f_dk1 = -nd2 * q;
    const double f_xi = h * (2.0 * s * xi + dk * (1.0 - 2.0 * xi)) / den - nd2 * c * (1.0 - 2.0 * xi);
    if (dfdx) *dfdx = f_xi / w;

    const double g_xk = -f_xi / w;
    const double g_w = -f_xi * xi / w - f_s * s / w;
    const double g_h = f_h + f_s / w;
    for (int m = 0; m < k; ++m) {
        gw_[m] += upstream * g_xk;
        gh_[m] += upstream;
    }
    gw_[k] += upstream * g_w;
    gh_[k] += upstream * g_h;
    gd_[k] += upstream * f_dk;
    gd_[k + 1] += upstream * f_dk1;
    return f;
}

RqSplineGrad RqSplineEval::finalize_grad() const {
    RqSplineGrad g{};
    const double scale = 1.0 - K * RqSpline::kMinBin;
    softmax_backward(width_probs_, gw_, scale, g.data());
    softmax_backward(height_probs_, gh_, scale, g.data() + K);
    for (int k = 0; k <= K; ++k) g[2 * K + k] = gd_[k] * sigmoid(raw_.raw_derivatives[k]);
    return g;
}

double rq_spline_eval(const RqSpline &spline, double x) { return RqSplineEval(spline)(x); }

double rq_spline_inverse(const RqSpline &spline, double y, double tol) {
    const RqSplineEval f(spline);
    double lo = 0.0, hi = 1.0;
    y = std::clamp(y, 0.0, 1.0);
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < y ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> ToneParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(kNumParams);
    for (const RqSpline *s : {&fg, &shadow[0], &shadow[1], &shadow[2]}) {
        const auto a = s->to_array();
        flat.insert(flat.end(), a.begin(), a.end());
    }
    return flat;
}

ToneParams ToneParams::unflatten(std::span<const double> flat) {
    if (flat.size() != static_cast<std::size_t>(kNumParams)) throw InvalidArgument("ToneParams::unflatten: size mismatch");
    constexpr auto n = static_cast<std::size_t>(RqSpline::kNumParams);
    ToneParams t;
    t.fg = RqSpline::from_array(flat.subspan(0, n));
    for (std::size_t c = 0; c < 3; ++c) t.shadow[c] = RqSpline::from_array(flat.subspan((c + 1) * n, n));
    return t;
}

Image apply_fg_tone(const Image &fg, const RqSpline &curve) {
    const RqSplineEval f(curve);
    Image out(fg.rows(), fg.cols(), fg.channels());
    for (std::size_t k = 0; k < fg.size(); ++k) out.storage()[k] = f(reinhard(fg.storage()[k]));
    return out;
}

Image apply_shadow_tone(const Image &beta, const std::array<RqSpline, 3> &curves) {
    if (beta.channels() != 3) throw InvalidArgument("apply_shadow_tone: expected 3 channels");
    const std::array<RqSplineEval, 3> f{RqSplineEval(curves[0]), RqSplineEval(curves[1]), RqSplineEval(curves[2])};
    Image out(beta.rows(), beta.cols(), 3);
    for (std::size_t k = 0; k < beta.size(); ++k) {
        const double b = beta.storage()[k];
        out.storage()[k] = b > 1.0 ? b : f[k % 3](std::max(b, 0.0));
    }
    return out;
}

ToneVjp apply_fg_tone_vjp(const Image &fg, const RqSpline &curve, const Image &upstream) {
    require_same_shape(fg, upstream, "apply_fg_tone_vjp");
    RqSplineEval f(curve);
    ToneVjp out{Image(fg.rows(), fg.cols(), fg.channels()), {}};
    for (std::size_t k = 0; k < fg.size(); ++k) {
        const double x = fg.storage()[k];
        const double u = upstream.storage()[k];
        double dfdr = 0.0;
        f.eval_accumulate(reinhard(x), u, &dfdr);
        out.d_input.storage()[k] = u * dfdr / ((1.0 + x) * (1.0 + x));
    }
    const auto g = f.finalize_grad();
    out.d_params.assign(g.begin(), g.end());
    return out;
}

ToneVjp apply_shadow_tone_vjp(const Image &beta, const std::array<RqSpline, 3> &curves, const Image &upstream) {
    require_same_shape(beta, upstream, "apply_shadow_tone_vjp");
    if (beta.channels() != 3) throw InvalidArgument("apply_shadow_tone_vjp: expected 3 channels");
    std::array<RqSplineEval, 3> f{RqSplineEval(curves[0]), RqSplineEval(curves[1]), RqSplineEval(curves[2])};
    ToneVjp out{Image(beta.rows(), beta.cols(), 3), {}};
    for (std::size_t k = 0; k < beta.size(); ++k) {
        const double b = beta.storage()[k];
        const double u = upstream.storage()[k];
        if (b > 1.0) {
            out.d_input.storage()[k] = u;
            continue;
        }
        double dfdx = 0.0;
        f[k % 3].eval_accumulate(std::max(b, 0.0), u, &dfdx);
        out.d_input.storage()[k] = b >= 0.0 ? u * dfdx : 0.0;
    }
    for (const auto &fc : f) {
        const auto g = fc.finalize_grad();
        out.d_params.insert(out.d_params.end(), g.begin(), g.end());
    }
    return out;
}

std::uint8_t srgb_encode(double linear) {
    const double x = std::clamp(linear, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * std::pow(x, 1.0 / kDisplayGamma)));
}

double srgb_decode(std::uint8_t code) { return std::pow(code / 255.0, kDisplayGamma); }

}  // namespace dipir
