#include "dipir/image.hpp"

#include <algorithm>
#include <cmath>

namespace dipir {

Image::Image(int rows, int cols, int channels, double fill) : rows_(rows), cols_(cols), channels_(channels) {
    if (rows < 0 || cols < 0 || channels < 0) throw InvalidArgument("Image: negative dimension");
    data_.assign(static_cast<std::size_t>(rows) * cols * channels, fill);
}

Image crop(const Image &img, const PixelRect &rect) {
    if (rect.row0 < 0 || rect.col0 < 0 || rect.rows <= 0 || rect.cols <= 0 || rect.row0 + rect.rows > img.rows() ||
        rect.col0 + rect.cols > img.cols())
        throw InvalidArgument("crop: rectangle outside image");
    Image out(rect.rows, rect.cols, img.channels());
    for (int r = 0; r < rect.rows; ++r)
        for (int c = 0; c < rect.cols; ++c)
            for (int ch = 0; ch < img.channels(); ++ch) out.at(r, c, ch) = img.at(rect.row0 + r, rect.col0 + c, ch);
    return out;
}

namespace {

struct Tap {
    int i0, i1;
    double w1;
};

// Source coordinate for an output sample, pixel-center aligned and clamped.
Tap bilinear_tap(int out_index, int out_size, int in_size) {
    const double src = (out_index + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    const double clamped = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int i0 = std::min(static_cast<int>(std::floor(clamped)), in_size - 1);
    const int i1 = std::min(i0 + 1, in_size - 1);
    return {i0, i1, clamped - i0};
}

}  // namespace

Image resize_bilinear(const Image &img, int out_rows, int out_cols) {
    if (out_rows <= 0 || out_cols <= 0 || img.empty()) throw InvalidArgument("resize_bilinear: empty size");
    Image out(out_rows, out_cols, img.channels());
    for (int r = 0; r < out_rows; ++r) {
        const Tap tr = bilinear_tap(r, out_rows, img.rows());
        for (int c = 0; c < out_cols; ++c) {
            const Tap tc = bilinear_tap(c, out_cols, img.cols());
            for (int ch = 0; ch < img.channels(); ++ch) {
                const double top = (1 - tc.w1) * img.at(tr.i0, tc.i0, ch) + tc.w1 * img.at(tr.i0, tc.i1, ch);
                const double bot = (1 - tc.w1) * img.at(tr.i1, tc.i0, ch) + tc.w1 * img.at(tr.i1, tc.i1, ch);
                out.at(r, c, ch) = (1 - tr.w1) * top + tr.w1 * bot;
            }
        }
    }
    return out;
}

Image resize_bilinear_vjp(const Image &grad_out, int in_rows, int in_cols) {
    Image g(in_rows, in_cols, grad_out.channels());
    for (int r = 0; r < grad_out.rows(); ++r) {
        const Tap tr = bilinear_tap(r, grad_out.rows(), in_rows);
        for (int c = 0; c < grad_out.cols(); ++c) {
            const Tap tc = bilinear_tap(c, grad_out.cols(), in_cols);
            for (int ch = 0; ch < grad_out.channels(); ++ch) {
                const double u = grad_out.at(r, c, ch);
                g.at(tr.i0, tc.i0, ch) += u * (1 - tr.w1) * (1 - tc.w1);
                g.at(tr.i0, tc.i1, ch) += u * (1 - tr.w1) * tc.w1;
                g.at(tr.i1, tc.i0, ch) += u * tr.w1 * (1 - tc.w1);
                g.at(tr.i1, tc.i1, ch) += u * tr.w1 * tc.w1;
            }
        }
    }
    return g;
}

}  // namespace dipir
