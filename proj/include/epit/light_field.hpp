// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "epit/error.hpp"
#include "epit/image.hpp"

namespace epit {

/// Extents of a 4D light field with C channels, row-major (u, v, h, w, c).
struct LfExtents {
  std::size_t u = 1;
  std::size_t v = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;

  std::size_t size() const { return u * v * h * w * c; }
  bool operator==(const LfExtents&) const = default;

  std::string str() const {
    return "(" + std::to_string(u) + "," + std::to_string(v) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

/// Dense light field L(u, v, h, w, c).
template <typename T>
class BasicLightField {
 public:
  BasicLightField() = default;
  explicit BasicLightField(LfExtents extents, T fill = T{0}) : extents_(extents) {
    validate_extents();
    data_.assign(extents_.size(), fill);
  }
  BasicLightField(LfExtents extents, std::vector<T> data)
      : extents_(extents), data_(std::move(data)) {
    validate_extents();
    if (data_.size() != extents_.size()) {
      throw ShapeError("LightField: data length " + std::to_string(data_.size()) +
                       " does not match extents " + extents_.str());
    }
  }

  const LfExtents& extents() const { return extents_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t u, std::size_t v, std::size_t h, std::size_t w,
                    std::size_t c = 0) const {
    return (((u * extents_.v + v) * extents_.h + h) * extents_.w + w) * extents_.c + c;
  }
  T& operator()(std::size_t u, std::size_t v, std::size_t h, std::size_t w, std::size_t c = 0) {
    return data_[index(u, v, h, w, c)];
  }
  const T& operator()(std::size_t u, std::size_t v, std::size_t h, std::size_t w,
                      std::size_t c = 0) const {
    return data_[index(u, v, h, w, c)];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  /// Sub-aperture image of channel c at angular position (u, v).
  Image<T> view(std::size_t u, std::size_t v, std::size_t c = 0) const {
    Image<T> img(extents_.h, extents_.w);
    for (std::size_t h = 0; h < extents_.h; ++h)
      for (std::size_t w = 0; w < extents_.w; ++w) img(h, w) = (*this)(u, v, h, w, c);
    return img;
  }

  void set_view(std::size_t u, std::size_t v, std::size_t c, const Image<T>& img) {
    if (img.height() != extents_.h || img.width() != extents_.w) {
      throw ShapeError("LightField::set_view: image extents differ from the light field");
    }
    for (std::size_t h = 0; h < extents_.h; ++h)
      for (std::size_t w = 0; w < extents_.w; ++w) (*this)(u, v, h, w, c) = img(h, w);
  }

  /// Same spatial window [top, top+rows) x [left, left+cols) from every view.
  BasicLightField crop(std::size_t top, std::size_t left, std::size_t rows,
                       std::size_t cols) const {
    if (top + rows > extents_.h || left + cols > extents_.w || rows == 0 || cols == 0) {
      throw ShapeError("LightField::crop: window exceeds spatial extents " + extents_.str());
    }
    BasicLightField out({extents_.u, extents_.v, rows, cols, extents_.c});
    for (std::size_t u = 0; u < extents_.u; ++u)
      for (std::size_t v = 0; v < extents_.v; ++v)
        for (std::size_t h = 0; h < rows; ++h)
          std::copy_n(&data_[index(u, v, top + h, left, 0)], cols * extents_.c,
                      &out.data_[out.index(u, v, h, 0, 0)]);
    return out;
  }

  template <typename U>
  BasicLightField<U> cast() const {
    return BasicLightField<U>(extents_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const BasicLightField&) const = default;

 private:
  void validate_extents() const {
    if (extents_.u == 0 || extents_.v == 0 || extents_.h == 0 || extents_.w == 0 ||
        extents_.c == 0) {
      throw ShapeError("LightField: all extents must be >= 1, got " + extents_.str());
    }
  }

  LfExtents extents_;
  std::vector<T> data_;
};

using LightField = BasicLightField<float>;

enum class Orientation { horizontal, vertical };

inline const char* to_string(Orientation o) {
  return o == Orientation::horizontal ? "horizontal" : "vertical";
}

/// Light field regrouped along one epipolar direction.
///
/// horizontal: shape (U*H, V, W, C); group g = u*H + h, tokens over (v, w).
/// vertical:   shape (V*W, U, H, C); group g = v*W + w, tokens over (u, h).
template <typename T>
struct BasicEpiVolume {
  Orientation orientation = Orientation::horizontal;
  std::size_t groups = 0;
  std::size_t angular = 0;
  std::size_t spatial = 0;
  std::size_t channels = 0;
  LfExtents source;
  std::vector<T> tokens;

  std::size_t index(std::size_t g, std::size_t a, std::size_t s, std::size_t c) const {
    return ((g * angular + a) * spatial + s) * channels + c;
  }
  const T& operator()(std::size_t g, std::size_t a, std::size_t s, std::size_t c = 0) const {
    return tokens[index(g, a, s, c)];
  }
  /// Token sequence length within one group.
  std::size_t sequence_length() const { return angular * spatial; }
};

using EpiVolume = BasicEpiVolume<float>;

template <typename T>
BasicEpiVolume<T> to_epi(const BasicLightField<T>& lf, Orientation orientation) {
  const LfExtents& e = lf.extents();
  BasicEpiVolume<T> vol;
  vol.orientation = orientation;
  vol.source = e;
  vol.channels = e.c;
  vol.tokens.resize(lf.size());
  if (orientation == Orientation::horizontal) {
    vol.groups = e.u * e.h;
    vol.angular = e.v;
    vol.spatial = e.w;
  } else {
    vol.groups = e.v * e.w;
    vol.angular = e.u;
    vol.spatial = e.h;
  }
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) {
            const std::size_t dst = orientation == Orientation::horizontal
                                        ? vol.index(u * e.h + h, v, w, c)
                                        : vol.index(v * e.w + w, u, h, c);
            vol.tokens[dst] = lf(u, v, h, w, c);
          }
  return vol;
}

template <typename T>
BasicLightField<T> from_epi(const BasicEpiVolume<T>& vol) {
  const LfExtents& e = vol.source;
  const bool hor = vol.orientation == Orientation::horizontal;
  const bool consistent =
      vol.channels == e.c && vol.tokens.size() == e.size() &&
      (hor ? (vol.groups == e.u * e.h && vol.angular == e.v && vol.spatial == e.w)
           : (vol.groups == e.v * e.w && vol.angular == e.u && vol.spatial == e.h));
  if (!consistent) {
    throw ShapeError("from_epi: volume (" + std::to_string(vol.groups) + "," +
                     std::to_string(vol.angular) + "," + std::to_string(vol.spatial) + "," +
                     std::to_string(vol.channels) + ") with " +
                     std::to_string(vol.tokens.size()) +
                     " tokens is inconsistent with source extents " + e.str());
  }
  BasicLightField<T> lf(e);
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) {
            const std::size_t src =
                hor ? vol.index(u * e.h + h, v, w, c) : vol.index(v * e.w + w, u, h, c);
            lf(u, v, h, w, c) = vol.tokens[src];
          }
  return lf;
}

/// Angular centre of an extent: (n - 1) / 2, half-integer for even n.
inline double angular_center(std::size_t n) { return (static_cast<double>(n) - 1.0) / 2.0; }

/// Integer disparity shear: adds `s` pixels of disparity per unit angular offset.
struct ShearSpec {
  int s = 0;
};

/// Spatial margin removed on each side by a shear of `s` over `n` views.
inline std::size_t shear_margin(int s, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(std::abs(s) * angular_center(n) - 1e-9));
}

/// output(u,v,h,w) = lf(u, v, h + s*(u-uc), w + s*(v-vc)), cropped to the region
/// that is valid in every view. Half-integer offsets (even angular extents with
/// odd s) are resolved with cubic interpolation.
template <typename T>
BasicLightField<T> shear(const BasicLightField<T>& lf, ShearSpec spec) {
  const LfExtents& e = lf.extents();
  const std::size_t mh = shear_margin(spec.s, e.u);
  const std::size_t mw = shear_margin(spec.s, e.v);
  if (2 * mh >= e.h || 2 * mw >= e.w) {
    throw ShapeError("shear: value " + std::to_string(spec.s) +
                     " leaves an empty valid region for extents " + e.str());
  }
  const LfExtents out_e{e.u, e.v, e.h - 2 * mh, e.w - 2 * mw, e.c};
  BasicLightField<T> out(out_e);
  const double uc = angular_center(e.u);
  const double vc = angular_center(e.v);
  for (std::size_t u = 0; u < e.u; ++u) {
    for (std::size_t v = 0; v < e.v; ++v) {
      const double dh = spec.s * (static_cast<double>(u) - uc) + static_cast<double>(mh);
      const double dw = spec.s * (static_cast<double>(v) - vc) + static_cast<double>(mw);
      const bool integral = dh == std::floor(dh) && dw == std::floor(dw);
      for (std::size_t c = 0; c < e.c; ++c) {
        if (integral) {
          const auto oh = static_cast<long>(dh);
          const auto ow = static_cast<long>(dw);
          for (std::size_t h = 0; h < out_e.h; ++h)
            for (std::size_t w = 0; w < out_e.w; ++w)
              out(u, v, h, w, c) = lf(u, v, static_cast<std::size_t>(static_cast<long>(h) + oh),
                                      static_cast<std::size_t>(static_cast<long>(w) + ow), c);
        } else {
          const Image<T> src = lf.view(u, v, c);
          for (std::size_t h = 0; h < out_e.h; ++h)
            for (std::size_t w = 0; w < out_e.w; ++w)
              out(u, v, h, w, c) = sample_bicubic(src, static_cast<double>(h) + dh,
                                                  static_cast<double>(w) + dw);
        }
      }
    }
  }
  return out;
}

/// Top-left texture coordinate of the central view used by synth_lf.
inline std::size_t centered_origin(std::size_t texture_len, std::size_t view_len) {
  return texture_len >= view_len ? (texture_len - view_len) / 2 : 0;
}

/// Constant-disparity scene built from per-channel textures:
/// lf(u,v,h,w,c) = texture_c(h0 + h + d*(u-uc), w0 + w + d*(v-vc)).
template <typename T>
BasicLightField<T> synth_lf(std::span<const Image<T>> textures, double disparity, std::size_t u_views,
                            std::size_t v_views, std::size_t height, std::size_t width,
                            std::size_t origin_h, std::size_t origin_w) {
  if (textures.empty()) throw DataError("synth_lf: no texture given");
  const Image<T>& first = textures.front();
  for (const auto& t : textures) {
    if (t.height() != first.height() || t.width() != first.width()) {
      throw DataError("synth_lf: channel textures differ in size");
    }
  }
  const double uc = angular_center(u_views);
  const double vc = angular_center(v_views);
  const double reach_h = std::abs(disparity) * uc;
  const double reach_w = std::abs(disparity) * vc;
  const double lo_h = static_cast<double>(origin_h) - reach_h;
  const double hi_h = static_cast<double>(origin_h + height - 1) + reach_h;
  const double lo_w = static_cast<double>(origin_w) - reach_w;
  const double hi_w = static_cast<double>(origin_w + width - 1) + reach_w;
  if (lo_h < 0.0 || lo_w < 0.0 || hi_h > static_cast<double>(first.height() - 1) ||
      hi_w > static_cast<double>(first.width() - 1)) {
    throw DataError("synth_lf: texture " + std::to_string(first.height()) + "x" +
                    std::to_string(first.width()) + " too small for views " +
                    std::to_string(height) + "x" + std::to_string(width) + " at disparity " +
                    std::to_string(disparity));
  }
  BasicLightField<T> lf({u_views, v_views, height, width, textures.size()});
  for (std::size_t u = 0; u < u_views; ++u)
    for (std::size_t v = 0; v < v_views; ++v) {
      const double oh = static_cast<double>(origin_h) + disparity * (static_cast<double>(u) - uc);
      const double ow = static_cast<double>(origin_w) + disparity * (static_cast<double>(v) - vc);
      for (std::size_t c = 0; c < textures.size(); ++c)
        for (std::size_t h = 0; h < height; ++h)
          for (std::size_t w = 0; w < width; ++w)
            lf(u, v, h, w, c) = sample_bicubic(textures[c], oh + static_cast<double>(h),
                                               ow + static_cast<double>(w));
    }
  return lf;
}

/// Single-channel scene with the central view centred in the texture.
template <typename T>
BasicLightField<T> synth_lf(const Image<T>& texture, double disparity, std::size_t u_views,
                            std::size_t v_views, std::size_t height, std::size_t width) {
  return synth_lf<T>(std::span<const Image<T>>(&texture, 1), disparity, u_views, v_views, height,
                     width, centered_origin(texture.height(), height),
                     centered_origin(texture.width(), width));
}

/// BT.601 luma, clamped to [0, 1].
template <typename T>
BasicLightField<T> rgb_to_y(const BasicLightField<T>& lf) {
  const LfExtents& e = lf.extents();
  if (e.c != 3) {
    throw ShapeError("rgb_to_y: expected 3 channels, got " + std::to_string(e.c));
  }
  BasicLightField<T> out({e.u, e.v, e.h, e.w, 1});
  const std::span<const T> src = lf.data();
  std::span<T> dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double y = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2];
    dst[i] = static_cast<T>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

/// Per-view, per-channel bicubic resampling.
template <typename T>
BasicLightField<T> resize_views(const BasicLightField<T>& lf, Rational scale) {
  const LfExtents& e = lf.extents();
  const std::size_t oh = detail::resized_length(e.h, scale);
  const std::size_t ow = detail::resized_length(e.w, scale);
  BasicLightField<T> out({e.u, e.v, oh, ow, e.c});
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t c = 0; c < e.c; ++c) out.set_view(u, v, c, bicubic_resize(lf.view(u, v, c), scale));
  return out;
}

/// Central crop whose spatial extents are multiples of `factor`.
template <typename T>
BasicLightField<T> crop_to_multiple(const BasicLightField<T>& lf, std::size_t factor) {
  const LfExtents& e = lf.extents();
  const std::size_t h = e.h / factor * factor;
  const std::size_t w = e.w / factor * factor;
  if (h == 0 || w == 0) {
    throw ShapeError("crop_to_multiple: spatial extents smaller than factor " +
                     std::to_string(factor));
  }
  if (h == e.h && w == e.w) return lf;
  return lf.crop((e.h - h) / 2, (e.w - w) / 2, h, w);
}

/// Spatial-angular transpose: (u, v, h, w) -> (v, u, w, h).
template <typename T>
BasicLightField<T> transpose_lf(const BasicLightField<T>& lf) {
  const LfExtents& e = lf.extents();
  BasicLightField<T> out({e.v, e.u, e.w, e.h, e.c});
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) out(v, u, w, h, c) = lf(u, v, h, w, c);
  return out;
}

}  // namespace epit
