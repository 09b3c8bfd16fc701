#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dipir/errors.hpp"

namespace dipir {

/// Dense row-major image with interleaved channels. Row 0 is the top row.
class Image {
public:
    Image() = default;
    Image(int rows, int cols, int channels, double fill = 0.0);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double &at(int r, int c, int ch = 0) { return data_[index(r, c, ch)]; }
    double at(int r, int c, int ch = 0) const { return data_[index(r, c, ch)]; }
    std::size_t index(int r, int c, int ch = 0) const {
        return (static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double> &storage() { return data_; }
    const std::vector<double> &storage() const { return data_; }

    bool same_shape(const Image &o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && channels_ == o.channels_;
    }
    bool operator==(const Image &o) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Image &a, const Image &b, const char *what) {
    if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": image shape mismatch");
}

/// Axis-aligned pixel rectangle [row0, row0+rows) x [col0, col0+cols).
struct PixelRect {
    int row0 = 0, col0 = 0, rows = 0, cols = 0;

    bool contains(int r, int c) const { return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols; }
    bool operator==(const PixelRect &) const = default;
};

Image crop(const Image &img, const PixelRect &rect);

/// Bilinear resampling (pixel-center aligned, edge clamped).
Image resize_bilinear(const Image &img, int out_rows, int out_cols);

/// Adjoint of resize_bilinear: scatters an output-space gradient back to the input grid.
Image resize_bilinear_vjp(const Image &grad_out, int in_rows, int in_cols);

}  // namespace dipir
