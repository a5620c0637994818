// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epit/image.hpp"
#include "epit/light_field.hpp"
#include "epit/rng.hpp"

namespace epit {

struct TextureOptions {
  std::size_t gratings = 6;
  std::size_t shapes = 12;
  /// Highest grating frequency in cycles per pixel.
  double max_frequency = 0.35;
};

/// Seeded test texture in [0.05, 0.95]: oriented sinusoidal gratings plus
/// hard-edged rectangles and discs, so it carries both fine periodic detail and
/// sharp edges.
template <typename T = float>
Image<T> make_texture(std::size_t height, std::size_t width, std::uint64_t seed, TextureOptions opt = {}) {
  Rng rng(seed);
  std::vector<double> img(height * width, 0.0);
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t g = 0; g < opt.gratings; ++g) {
    const double f = rng.uniform(0.03, opt.max_frequency);
    const double theta = rng.uniform(0.0, kTwoPi);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double amp = rng.uniform(0.3, 1.0);
    const double fy = f * std::sin(theta);
    const double fx = f * std::cos(theta);
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w)
        img[h * width + w] += amp * std::cos(kTwoPi * (fy * double(h) + fx * double(w)) + phase);
  }
  for (std::size_t s = 0; s < opt.shapes; ++s) {
    const bool disc = rng.coin();
    const double cy = rng.uniform(0.0, double(height));
    const double cx = rng.uniform(0.0, double(width));
    const double ry = rng.uniform(2.0, double(height) / 6.0 + 2.0);
    const double rx = disc ? ry : rng.uniform(2.0, double(width) / 6.0 + 2.0);
    const double level = rng.uniform(-2.0, 2.0);
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        const double dy = (double(h) - cy) / ry;
        const double dx = (double(w) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) img[h * width + w] += level;
      }
  }
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const double span = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
  Image<T> out(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) out.data()[i] = static_cast<T>(0.05 + 0.9 * (img[i] - *lo) / span);
  return out;
}

struct SynthSceneSpec {
  std::size_t u_views = 5;
  std::size_t v_views = 5;
  std::size_t height = 64;
  std::size_t width = 64;
  double disparity = 1.0;
  std::uint64_t seed = 0;
};

/// Smallest square texture that covers every view of a scene at `max_disparity`.
inline std::size_t texture_extent(const SynthSceneSpec& s, double max_disparity) {
  const double reach = std::abs(max_disparity) * std::max(angular_center(s.u_views), angular_center(s.v_views));
  return std::max(s.height, s.width) + 2 * static_cast<std::size_t>(std::ceil(reach)) + 4;
}

/// Constant-disparity scene over a seeded texture.
inline LightField make_synthetic_scene(const SynthSceneSpec& s, double texture_reach = 4.0) {
  const std::size_t t = texture_extent(s, std::max(std::abs(s.disparity), texture_reach));
  const Image<float> tex = make_texture<float>(t, t, s.seed);
  return synth_lf(tex, s.disparity, s.u_views, s.v_views, s.height, s.width);
}

}  // namespace epit
