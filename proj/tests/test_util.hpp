// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "epit/image.hpp"
#include "epit/light_field.hpp"
#include "epit/rng.hpp"
#include "epit/tensor.hpp"

namespace epit::testing {

inline LightField random_lf(LfExtents e, std::uint64_t seed) {
  Rng rng(seed);
  LightField lf(e);
  for (float& x : lf.data()) x = static_cast<float>(rng.uniform());
  return lf;
}

template <typename T = float>
Image<T> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image<T> img(h, w);
  for (T& x : img.data()) x = static_cast<T>(rng.uniform());
  return img;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (T& x : t.values()) x = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace epit::testing
