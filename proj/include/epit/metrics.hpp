// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "epit/error.hpp"
#include "epit/image.hpp"

namespace epit {

/// CSV value written for an infinite PSNR.
inline constexpr double kPsnrCsvCap = 100.0;

inline double psnr_for_csv(double db) { return db > kPsnrCsvCap ? kPsnrCsvCap : db; }

template <typename A, typename B>
void require_same_extents(const Image<A>& a, const Image<B>& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": image extents differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

/// 10 log10(peak^2 / MSE); +infinity for identical images.
template <typename A, typename B>
double psnr(const Image<A>& a, const Image<B>& b, double peak = 1.0) {
  require_same_extents(a, b, "psnr");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - c;
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

/// Single-scale SSIM averaged over every window position fully inside the image.
template <typename A, typename B>
double ssim(const Image<A>& a, const Image<B>& b, const SsimOptions& opt = {}) {
  require_same_extents(a, b, "ssim");
  const std::size_t n = opt.window;
  if (a.height() < n || a.width() < n) {
    throw ShapeError("ssim: image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                     " is smaller than the " + std::to_string(n) + "x" + std::to_string(n) + " window");
  }
  const std::vector<double> g = gaussian_taps(n, opt.sigma);
  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
  const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  const std::size_t oh = a.height() - n + 1;
  const std::size_t ow = a.width() - n + 1;
  const std::size_t w = a.width();

  // Separable filtering of x, y, x^2, y^2, xy: rows first, then columns.
  std::vector<double> x(a.size()), y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    x[i] = static_cast<double>(a.data()[i]);
    y[i] = static_cast<double>(b.data()[i]);
  }
  auto filter = [&](auto&& f) {
    std::vector<double> rows(a.height() * ow);
    for (std::size_t r = 0; r < a.height(); ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += g[k] * f(r * w + c + k);
        rows[r * ow + c] = acc;
      }
    std::vector<double> out(oh * ow);
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += g[k] * rows[(r + k) * ow + c];
        out[r * ow + c] = acc;
      }
    return out;
  };
  const auto mx = filter([&](std::size_t i) { return x[i]; });
  const auto my = filter([&](std::size_t i) { return y[i]; });
  const auto sxx = filter([&](std::size_t i) { return x[i] * x[i]; });
  const auto syy = filter([&](std::size_t i) { return y[i] * y[i]; });
  const auto sxy = filter([&](std::size_t i) { return x[i] * y[i]; });

  double total = 0.0;
  for (std::size_t i = 0; i < oh * ow; ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(oh * ow);
}

}  // namespace epit
