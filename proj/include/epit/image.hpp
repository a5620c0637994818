// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "epit/error.hpp"

namespace epit {

/// Single-channel row-major image.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, T fill = T{0})
      : height_(height), width_(width), data_(height * width, fill) {}
  Image(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_) {
      throw ShapeError("Image: data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(height_) + "x" +
                       std::to_string(width_));
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t h, std::size_t w) { return data_[h * width_ + w]; }
  const T& operator()(std::size_t h, std::size_t w) const { return data_[h * width_ + w]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  /// Copy of the rectangle [top, top+rows) x [left, left+cols).
  Image crop(std::size_t top, std::size_t left, std::size_t rows, std::size_t cols) const {
    if (top + rows > height_ || left + cols > width_) {
      throw ShapeError("Image::crop: window exceeds image bounds");
    }
    Image out(rows, cols);
    for (std::size_t h = 0; h < rows; ++h) {
      std::copy_n(&data_[(top + h) * width_ + left], cols, &out.data_[h * cols]);
    }
    return out;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

/// Positive rational number num/den used for resampling factors.
struct Rational {
  long num = 1;
  long den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  Rational inverse() const { return {den, num}; }
};

/// Cubic convolution kernel with parameter a = -0.5.
inline double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0;
  if (ax < 2.0) return a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a;
  return 0.0;
}

namespace detail {

/// Sparse resampling matrix for one axis: for each output index, a list of
/// (clamped source index, normalized weight).
struct AxisWeights {
  std::vector<std::vector<std::size_t>> index;
  std::vector<std::vector<double>> weight;
};

inline std::size_t resized_length(std::size_t in, Rational scale) {
  // ceil(in * num / den) in exact integer arithmetic
  const auto n = static_cast<long long>(in) * scale.num;
  return static_cast<std::size_t>((n + scale.den - 1) / scale.den);
}

inline AxisWeights resize_axis_weights(std::size_t in_len, std::size_t out_len, double scale) {
  const bool shrink = scale < 1.0;
  const double kernel_scale = shrink ? scale : 1.0;
  const double support = shrink ? 2.0 / scale : 2.0;
  AxisWeights aw;
  aw.index.resize(out_len);
  aw.weight.resize(out_len);
  const auto last = static_cast<long>(in_len) - 1;
  for (std::size_t o = 0; o < out_len; ++o) {
    const double center = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto first = static_cast<long>(std::floor(center - support));
    const auto end = static_cast<long>(std::ceil(center + support));
    double total = 0.0;
    for (long i = first; i <= end; ++i) {
      const double w = kernel_scale * cubic_kernel(kernel_scale * (center - static_cast<double>(i)));
      if (w == 0.0) continue;
      aw.index[o].push_back(static_cast<std::size_t>(std::clamp(i, 0L, last)));
      aw.weight[o].push_back(w);
      total += w;
    }
    for (double& w : aw.weight[o]) w /= total;
  }
  return aw;
}

}  // namespace detail

/// Separable bicubic resampling with clamp-to-edge borders. Downscaling widens
/// the kernel by 1/scale (antialiasing). Output extents are ceil(n * scale).
template <typename T>
Image<T> bicubic_resize(const Image<T>& image, Rational scale) {
  if (scale.num <= 0 || scale.den <= 0) {
    throw ConfigError("bicubic_resize: scale must be positive, got " + std::to_string(scale.num) +
                      "/" + std::to_string(scale.den));
  }
  if (image.size() == 0) throw ShapeError("bicubic_resize: empty image");
  const std::size_t out_h = detail::resized_length(image.height(), scale);
  const std::size_t out_w = detail::resized_length(image.width(), scale);
  const auto rows = detail::resize_axis_weights(image.height(), out_h, scale.value());
  const auto cols = detail::resize_axis_weights(image.width(), out_w, scale.value());

  // width first, then height
  std::vector<double> tmp(image.height() * out_w);
  for (std::size_t h = 0; h < image.height(); ++h) {
    for (std::size_t o = 0; o < out_w; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < cols.index[o].size(); ++k) {
        acc += cols.weight[o][k] * static_cast<double>(image(h, cols.index[o][k]));
      }
      tmp[h * out_w + o] = acc;
    }
  }
  Image<T> out(out_h, out_w);
  for (std::size_t o = 0; o < out_h; ++o) {
    for (std::size_t w = 0; w < out_w; ++w) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rows.index[o].size(); ++k) {
        acc += rows.weight[o][k] * tmp[rows.index[o][k] * out_w + w];
      }
      out(o, w) = static_cast<T>(acc);
    }
  }
  return out;
}

/// Cubic interpolation of `image` at a real position (clamp-to-edge taps).
/// Integer positions return the stored sample exactly.
template <typename T>
T sample_bicubic(const Image<T>& image, double h, double w) {
  const double fh = std::floor(h);
  const double fw = std::floor(w);
  const auto last_h = static_cast<long>(image.height()) - 1;
  const auto last_w = static_cast<long>(image.width()) - 1;
  if (fh == h && fw == w) {
    return image(static_cast<std::size_t>(std::clamp(static_cast<long>(fh), 0L, last_h)),
                 static_cast<std::size_t>(std::clamp(static_cast<long>(fw), 0L, last_w)));
  }
  double wh[4];
  double ww[4];
  for (int k = 0; k < 4; ++k) {
    wh[k] = cubic_kernel(h - (fh - 1.0 + k));
    ww[k] = cubic_kernel(w - (fw - 1.0 + k));
  }
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto r = static_cast<std::size_t>(std::clamp(static_cast<long>(fh) - 1 + i, 0L, last_h));
    double row = 0.0;
    for (int j = 0; j < 4; ++j) {
      const auto c = static_cast<std::size_t>(std::clamp(static_cast<long>(fw) - 1 + j, 0L, last_w));
      row += ww[j] * static_cast<double>(image(r, c));
    }
    acc += wh[i] * row;
  }
  return static_cast<T>(acc);
}

}  // namespace epit
