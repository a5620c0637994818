// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable operations recorded on a Tape. Each op computes its forward
// value eagerly and registers the matching gradient rule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "epit/error.hpp"
#include "epit/tape.hpp"
#include "epit/tensor.hpp"

namespace epit::ops {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void add_to(T* dst, const T* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace detail

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  detail::require(x.shape() == y.shape(),
                  "add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* ga = t.accumulate_into(a)) detail::add_to(ga, g.data(), g.size());
    if (T* gb = t.accumulate_into(b)) detail::add_to(gb, g.data(), g.size());
  }, "add");
}

/// x[..., N] + bias[N]
template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  detail::require(bv.rank() == 1 && xv.rank() >= 1 && xv.shape().back() == bv.dim(0),
                  "add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  const std::size_t n = bv.size();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return tape.record(std::move(out), {x, bias}, [x, bias, n](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* gx = t.accumulate_into(x)) detail::add_to(gx, g.data(), g.size());
    if (T* gb = t.accumulate_into(bias)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  }, "add_bias");
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return tape.record(std::move(out), {x}, [x, factor](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* gx = t.accumulate_into(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    }
  }, "scale");
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T acc{0};
  for (T v : xv.values()) acc += v;
  return tape.record(Tensor<T>({1}, {acc}), {x}, [x](Tape<T>& t, std::size_t id) {
    const T g = t.output_grad(id)[0];
    if (T* gx = t.accumulate_into(x)) {
      const std::size_t n = t.value(x).size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  }, "sum");
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* gx = t.accumulate_into(x)) detail::add_to(gx, g.data(), g.size());
  }, "reshape");
}

namespace detail {

/// For a permutation `axes` of an input shape, returns for every output flat
/// index the matching input flat index.
inline std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in.size();
  require(axes.size() == rank, "permute: axes rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    require(a < rank && !seen[a], "permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_size(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Axis permutation: output axis i is input axis axes[i].
template <typename T>
Var permute(Tape<T>& tape, Var x, const std::vector<std::size_t>& axes) {
  const Tensor<T>& xv = tape.value(x);
  auto map = detail::permutation_map(xv.shape(), axes);
  Shape shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) shape[i] = xv.dim(axes[i]);
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  return tape.record(std::move(out), {x}, [x, map = std::move(map)](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* gx = t.accumulate_into(x)) {
      for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
    }
  }, "permute");
}

/// a[..., M, K] x b[K, N] -> [..., M, N]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require(av.rank() >= 2 && bv.rank() == 2 && av.shape().back() == bv.dim(0),
                  "matmul: cannot contract " + shape_str(av.shape()) + " with " +
                      shape_str(bv.shape()));
  const std::size_t k = bv.dim(0);
  const std::size_t n = bv.dim(1);
  const std::size_t rows = av.size() / k;
  Shape shape = av.shape();
  shape.back() = n;
  Tensor<T> out(shape);
  kernels::gemm(rows, n, k, av.data(), false, bv.data(), false, out.data(), false);
  return tape.record(std::move(out), {a, b}, [a, b, rows, k, n](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* ga = t.accumulate_into(a)) {
      kernels::gemm(rows, k, n, g.data(), false, t.value(b).data(), true, ga, true);
    }
    if (T* gb = t.accumulate_into(b)) {
      kernels::gemm(k, n, rows, t.value(a).data(), true, g.data(), false, gb, true);
    }
  }, "matmul");
}

/// Batched product: a[G, M, K] x b[G, K, N], or x b[G, N, K]^T when transpose_b.
template <typename T>
Var batched_matmul(Tape<T>& tape, Var a, Var b, bool transpose_b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0),
                  "batched_matmul: need rank-3 operands with equal batch, got " +
                      shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t groups = av.dim(0);
  const std::size_t m = av.dim(1);
  const std::size_t k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  detail::require((transpose_b ? bv.dim(2) : bv.dim(1)) == k,
                  "batched_matmul: inner extents differ: " + shape_str(av.shape()) + " and " +
                      shape_str(bv.shape()));
  Tensor<T> out({groups, m, n});
  for (std::size_t g = 0; g < groups; ++g) {
    kernels::gemm(m, n, k, av.data() + g * m * k, false, bv.data() + g * k * n, transpose_b,
                  out.data() + g * m * n, false);
  }
  return tape.record(std::move(out), {a, b},
                     [a, b, groups, m, k, n, transpose_b](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    const T* A = t.value(a).data();
    const T* B = t.value(b).data();
    T* ga = t.accumulate_into(a);
    T* gb = t.accumulate_into(b);
    for (std::size_t i = 0; i < groups; ++i) {
      const T* gi = g.data() + i * m * n;
      if (ga) {
        // dA = dC * B^T  (B stored [K,N])  or  dC * B  (B stored [N,K])
        kernels::gemm(m, k, n, gi, false, B + i * k * n, !transpose_b, ga + i * m * k, true);
      }
      if (gb) {
        if (transpose_b) {
          // dB[N,K] = dC^T * A
          kernels::gemm(n, k, m, gi, true, A + i * m * k, false, gb + i * k * n, true);
        } else {
          // dB[K,N] = A^T * dC
          kernels::gemm(k, n, m, A + i * m * k, true, gi, false, gb + i * k * n, true);
        }
      }
    }
  }, "batched_matmul");
}

/// Softmax over the last axis with max subtraction.
template <typename T>
Var softmax_last(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  detail::require(xv.rank() >= 1 && xv.shape().back() >= 1, "softmax_last: empty last axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = std::exp(in[i] - mx);
      total += o[i];
    }
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
  }
  return tape.record(std::move(out), {x}, [x, n, rows](Tape<T>& t, std::size_t id) {
    T* gx = t.accumulate_into(x);
    if (!gx) return;
    const Tensor<T>& g = t.output_grad(id);
    const Tensor<T>& y = t.value_at(id);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * n;
      const T* yr = y.data() + r * n;
      T dot{0};
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
    }
  }, "softmax_last");
}

/// Per-token standardisation over the last axis followed by gamma * x + beta.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  detail::require(xv.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = xv.shape().back();
  detail::require(d >= 1 && gv.size() == d && bv.size() == d,
                  "layer_norm: affine parameters do not match width " + std::to_string(d));
  const std::size_t rows = xv.size() / d;
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mean{0};
    for (std::size_t i = 0; i < d; ++i) mean += in[i];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (in[i] - mean) * rstd[r];
      out[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
    }
  }
  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t,
                                                                                std::size_t id) {
        const Tensor<T>& g = t.output_grad(id);
        const Tensor<T>& gv = t.value(gamma);
        if (T* gg = t.accumulate_into(gamma)) {
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (T* gb = t.accumulate_into(beta)) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (T* gx = t.accumulate_into(x)) {
          std::vector<T> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d{0};
            T mean_dx{0};
            for (std::size_t i = 0; i < d; ++i) {
              dxhat[i] = g[r * d + i] * gv[i];
              mean_d += dxhat[i];
              mean_dx += dxhat[i] * xhat[r * d + i];
            }
            mean_d /= static_cast<T>(d);
            mean_dx /= static_cast<T>(d);
            for (std::size_t i = 0; i < d; ++i) {
              gx[r * d + i] += rstd[r] * (dxhat[i] - mean_d - xhat[r * d + i] * mean_dx);
            }
          }
        }
      },
      "layer_norm");
}

/// x if x >= 0 else slope * x; the gate at 0 passes the gradient unchanged.
template <typename T>
Var leaky_relu(Tape<T>& tape, Var x, T slope) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] >= T{0} ? xv[i] : slope * xv[i];
  if (tape.tracking_branches()) {
    for (std::size_t i = 0; i < out.size(); ++i) tape.note_branch(xv[i] >= T{0});
  }
  return tape.record(std::move(out), {x}, [x, slope](Tape<T>& t, std::size_t id) {
    T* gx = t.accumulate_into(x);
    if (!gx) return;
    const Tensor<T>& g = t.output_grad(id);
    const Tensor<T>& xv = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] >= T{0} ? g[i] : slope * g[i];
  }, "leaky_relu");
}

enum class Padding { same, none };

namespace detail {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, pad_h, pad_w, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(g.pad_h);
          for (std::size_t z = 0; z < g.ow; ++z) {
            const long sz = static_cast<long>(z + j) - static_cast<long>(g.pad_w);
            const bool inside = sy >= 0 && sz >= 0 && sy < static_cast<long>(g.h) &&
                                sz < static_cast<long>(g.w);
            row[y * g.ow + z] = inside ? x[(c * g.h + sy) * g.w + sz] : T{0};
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(g.pad_h);
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          for (std::size_t z = 0; z < g.ow; ++z) {
            const long sz = static_cast<long>(z + j) - static_cast<long>(g.pad_w);
            if (sz < 0 || sz >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + sy) * g.w + sz] += row[y * g.ow + z];
          }
        }
      }
}

/// im2col of nb images side by side: col[patch, nb * pixels].
template <typename T>
void im2col_batch(const T* x, std::size_t nb, const ConvGeometry& g, T* col) {
  const std::size_t pix = g.pixels();
  std::vector<T> one(g.patch() * pix);
  for (std::size_t b = 0; b < nb; ++b) {
    im2col(x + b * g.cin * g.h * g.w, g, one.data());
    for (std::size_t r = 0; r < g.patch(); ++r)
      std::copy_n(one.data() + r * pix, pix, col + r * nb * pix + b * pix);
  }
}

template <typename T>
void col2im_batch_add(const T* col, std::size_t nb, const ConvGeometry& g, T* dx) {
  const std::size_t pix = g.pixels();
  std::vector<T> one(g.patch() * pix);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t r = 0; r < g.patch(); ++r)
      std::copy_n(col + r * nb * pix + b * pix, pix, one.data() + r * pix);
    col2im_add(one.data(), g, dx + b * g.cin * g.h * g.w);
  }
}

/// [cout, nb * pixels] -> [nb, cout, pixels]
template <typename T>
void scatter_channels(const T* prod, std::size_t nb, const ConvGeometry& g, T* out) {
  const std::size_t pix = g.pixels();
  for (std::size_t c = 0; c < g.cout; ++c)
    for (std::size_t b = 0; b < nb; ++b)
      std::copy_n(prod + c * nb * pix + b * pix, pix, out + (b * g.cout + c) * pix);
}

/// [nb, cout, pixels] -> [cout, nb * pixels]
template <typename T>
void gather_channels(const T* in, std::size_t nb, const ConvGeometry& g, T* prod) {
  const std::size_t pix = g.pixels();
  for (std::size_t c = 0; c < g.cout; ++c)
    for (std::size_t b = 0; b < nb; ++b)
      std::copy_n(in + (b * g.cout + c) * pix, pix, prod + c * nb * pix + b * pix);
}

}  // namespace detail

/// 2-D cross-correlation: x[B, Ci, H, W], w[Co, Ci, kh, kw], optional bias[Co].
/// Padding::same zero-pads odd kernels to keep H x W; Padding::none gives
/// (H - kh + 1) x (W - kw + 1).
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, Padding padding) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(weight);
  detail::require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1),
                  "conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " +
                      shape_str(wv.shape()));
  detail::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0),
                         wv.dim(2), wv.dim(3), 0, 0, 0, 0};
  if (padding == Padding::same) {
    detail::require(g.kh % 2 == 1 && g.kw % 2 == 1, "conv2d: same padding needs odd kernels");
    g.pad_h = g.kh / 2;
    g.pad_w = g.kw / 2;
    g.oh = g.h;
    g.ow = g.w;
  } else {
    detail::require(g.h >= g.kh && g.w >= g.kw, "conv2d: kernel larger than input");
    g.oh = g.h - g.kh + 1;
    g.ow = g.w - g.kw + 1;
  }
  if (bias.valid()) {
    detail::require(tape.value(bias).size() == g.cout, "conv2d: bias length must equal Co");
  }
  // Images are processed in chunks whose im2col buffer stays below ~16 MB, so
  // each product covers several images at once.
  const std::size_t per_image = g.patch() * g.pixels();
  const std::size_t chunk = std::clamp<std::size_t>((std::size_t{4} << 20) / std::max<std::size_t>(per_image, 1),
                                                    1, g.batch);
  Tensor<T> out({g.batch, g.cout, g.oh, g.ow});
  {
    std::vector<T> col(per_image * chunk);
    std::vector<T> prod(g.cout * g.pixels() * chunk);
    for (std::size_t b0 = 0; b0 < g.batch; b0 += chunk) {
      const std::size_t nb = std::min(chunk, g.batch - b0);
      const std::size_t cols = nb * g.pixels();
      detail::im2col_batch(xv.data() + b0 * g.cin * g.h * g.w, nb, g, col.data());
      kernels::gemm(g.cout, cols, g.patch(), wv.data(), false, col.data(), false, prod.data(), false);
      detail::scatter_channels(prod.data(), nb, g, out.data() + b0 * g.cout * g.pixels());
    }
  }
  if (bias.valid()) {
    const Tensor<T>& bv = tape.value(bias);
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (b * g.cout + c) * g.pixels();
        for (std::size_t p = 0; p < g.pixels(); ++p) o[p] += bv[c];
      }
  }
  auto backward = [x, weight, bias, g, chunk](Tape<T>& t, std::size_t id) {
    const Tensor<T>& go = t.output_grad(id);
    T* gx = t.accumulate_into(x);
    T* gw = t.accumulate_into(weight);
    T* gb = bias.valid() ? t.accumulate_into(bias) : nullptr;
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(weight);
    if (gb) {
      for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t c = 0; c < g.cout; ++c) {
          const T* o = go.data() + (b * g.cout + c) * g.pixels();
          for (std::size_t p = 0; p < g.pixels(); ++p) gb[c] += o[p];
        }
    }
    if (!gw && !gx) return;
    const std::size_t per_image = g.patch() * g.pixels();
    std::vector<T> col(per_image * chunk);
    std::vector<T> gcat(g.cout * g.pixels() * chunk);
    for (std::size_t b0 = 0; b0 < g.batch; b0 += chunk) {
      const std::size_t nb = std::min(chunk, g.batch - b0);
      const std::size_t cols = nb * g.pixels();
      detail::gather_channels(go.data() + b0 * g.cout * g.pixels(), nb, g, gcat.data());
      if (gw) {
        detail::im2col_batch(xv.data() + b0 * g.cin * g.h * g.w, nb, g, col.data());
        kernels::gemm(g.cout, g.patch(), cols, gcat.data(), false, col.data(), true, gw, true);
      }
      if (gx) {
        kernels::gemm(g.patch(), cols, g.cout, wv.data(), true, gcat.data(), false, col.data(), false);
        detail::col2im_batch_add(col.data(), nb, g, gx + b0 * g.cin * g.h * g.w);
      }
    }
  };
  if (bias.valid()) return tape.record(std::move(out), {x, weight, bias}, backward, "conv2d");
  return tape.record(std::move(out), {x, weight}, backward, "conv2d");
}

namespace detail {

/// Flat index of in(b, c*r*r + i*r + j, h, w) for every out(b, c, r*h+i, r*w+j).
inline std::vector<std::size_t> shuffle_map(const Shape& in, std::size_t r) {
  require(in.size() == 4, "pixel_shuffle: expected rank-4 input, got " + shape_str(in));
  require(r >= 1 && in[1] % (r * r) == 0,
          "pixel_shuffle: channels " + std::to_string(in[1]) + " not divisible by " +
              std::to_string(r * r));
  const std::size_t batch = in[0];
  const std::size_t cin = in[1];
  const std::size_t c = cin / (r * r);
  const std::size_t h = in[2];
  const std::size_t w = in[3];
  std::vector<std::size_t> map(shape_size(in));
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h * r; ++y)
        for (std::size_t z = 0; z < w * r; ++z) {
          const std::size_t src_c = ch * r * r + (y % r) * r + (z % r);
          map[o++] = ((b * cin + src_c) * h + y / r) * w + z / r;
        }
  return map;
}

}  // namespace detail

/// Depth-to-space: [B, C*r^2, H, W] -> [B, C, r*H, r*W].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  const auto map = detail::shuffle_map(x.shape(), r);
  Tensor<T> out({x.dim(0), x.dim(1) / (r * r), x.dim(2) * r, x.dim(3) * r});
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x[map[o]];
  return out;
}

/// Space-to-depth inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& y, std::size_t r) {
  detail::require(y.rank() == 4 && y.dim(2) % r == 0 && y.dim(3) % r == 0,
                  "pixel_unshuffle: spatial extents not divisible by " + std::to_string(r));
  const Shape in{y.dim(0), y.dim(1) * r * r, y.dim(2) / r, y.dim(3) / r};
  const auto map = detail::shuffle_map(in, r);
  Tensor<T> out(in);
  for (std::size_t o = 0; o < map.size(); ++o) out[map[o]] = y[o];
  return out;
}

template <typename T>
Var pixel_shuffle(Tape<T>& tape, Var x, std::size_t r) {
  auto map = detail::shuffle_map(tape.shape(x), r);
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out({xv.dim(0), xv.dim(1) / (r * r), xv.dim(2) * r, xv.dim(3) * r});
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  return tape.record(std::move(out), {x}, [x, map = std::move(map)](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.output_grad(id);
    if (T* gx = t.accumulate_into(x)) {
      for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
    }
  }, "pixel_shuffle");
}

/// Mean absolute error; gradient sign(pred - target) / N with sign(0) = 0.
template <typename T>
Var l1_loss(Tape<T>& tape, Var pred, Var target) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& q = tape.value(target);
  detail::require(p.shape() == q.shape(), "l1_loss: shape mismatch " + shape_str(p.shape()) +
                                              " vs " + shape_str(q.shape()));
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  if (tape.tracking_branches()) {
    for (std::size_t i = 0; i < p.size(); ++i) tape.note_branch(p[i] > q[i] ? 2u : (p[i] < q[i] ? 0u : 1u));
  }
  const T n = static_cast<T>(p.size());
  return tape.record(Tensor<T>({1}, {acc / n}), {pred, target},
                     [pred, target, n](Tape<T>& t, std::size_t id) {
    const T g = t.output_grad(id)[0] / n;
    const Tensor<T>& p = t.value(pred);
    const Tensor<T>& q = t.value(target);
    T* gp = t.accumulate_into(pred);
    T* gq = t.accumulate_into(target);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T d = p[i] - q[i];
      const T s = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (gp) gp[i] += g * s;
      if (gq) gq[i] -= g * s;
    }
  }, "l1_loss");
}

}  // namespace epit::ops
