// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "epit/config.hpp"
#include "epit/light_field.hpp"
#include "epit/model.hpp"
#include "epit/ops.hpp"
#include "epit/tape.hpp"

namespace epit {

/// Angular and spatial extents of a feature tensor laid out as [U*V, C, H, W].
struct LfDims {
  std::size_t u = 1;
  std::size_t v = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t views() const { return u * v; }
  bool operator==(const LfDims&) const = default;
};

/// Parameters of an EpitWeights recorded on a tape.
template <typename T>
class Binding {
 public:
  Binding(Tape<T>& tape, const EpitWeights<T>& weights, bool trainable) : weights_(&weights) {
    vars_.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      vars_.push_back(trainable ? tape.parameter(weights.value(i)) : tape.constant(weights.value(i)));
    }
  }

  /// Binds vars already recorded on a tape, one per layout entry.
  Binding(const EpitWeights<T>& weights, std::vector<Var> vars) : weights_(&weights), vars_(std::move(vars)) {
    if (vars_.size() != weights.size()) {
      throw ShapeError("Binding: " + std::to_string(vars_.size()) + " vars for " +
                       std::to_string(weights.size()) + " parameters");
    }
  }

  Var operator[](const std::string& name) const { return vars_[weights_->index_of(name)]; }
  const std::vector<Var>& vars() const { return vars_; }
  const EpitConfig& config() const { return weights_->config(); }

 private:
  const EpitWeights<T>* weights_;
  std::vector<Var> vars_;
};

/// Captures the attention matrix of one Basic-Transformer invocation.
template <typename T>
struct AttentionProbe {
  std::size_t block = 0;
  Orientation orientation = Orientation::vertical;
  std::size_t group = 0;
  std::optional<Tensor<T>> matrix;  // [L, L] once captured
  LfDims dims;                      // feature extents at capture time
};

/// Per-invocation context threaded through the blocks.
template <typename T>
struct ForwardContext {
  AttentionProbe<T>* probe = nullptr;
  std::size_t block = 0;
  Orientation orientation = Orientation::horizontal;
  LfDims dims;
};

namespace net {

template <typename T>
Var conv(Tape<T>& tape, const Binding<T>& p, const std::string& prefix, Var x, ops::Padding pad) {
  return ops::conv2d(tape, x, p[prefix + ".weight"], p[prefix + ".bias"], pad);
}

/// Three 3x3 convolutions, each followed by LeakyReLU, applied to every view.
template <typename T>
Var spatial_conv(Tape<T>& tape, const Binding<T>& p, const std::string& prefix, Var x) {
  const T slope = static_cast<T>(p.config().leaky_slope);
  for (const char* stage : {".conv0", ".conv1", ".conv2"}) {
    x = ops::leaky_relu(tape, conv(tape, p, prefix + stage, x, ops::Padding::same), slope);
  }
  return x;
}

/// softmax(Q K^T / sqrt(D)) over the key axis; q, k are [G, L, D].
template <typename T>
Var attention_scores(Tape<T>& tape, Var q, Var k) {
  const std::size_t d = tape.shape(q).back();
  const Var logits = ops::batched_matmul(tape, q, k, true);
  return ops::softmax_last(tape, ops::scale(tape, logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))));
}

/// Single-head pre-norm transformer over tokens [G, L, C]:
///   T = X W_in, A = attn(LN(T)), T' = A LN(T) W_V + T,
///   T^ = MLP(LN(T')) + T', out = T^ W_out.
template <typename T>
Var basic_transformer(Tape<T>& tape, const Binding<T>& p, const std::string& u, Var tokens,
                      ForwardContext<T>* ctx = nullptr) {
  const EpitConfig& cfg = p.config();
  const T slope = static_cast<T>(cfg.leaky_slope);
  const T eps = static_cast<T>(cfg.ln_eps);
  const Var t = ops::matmul(tape, tokens, p[u + ".w_in"]);
  const Var tn = ops::layer_norm(tape, t, p[u + ".ln1.gamma"], p[u + ".ln1.beta"], eps);
  const Var q = ops::matmul(tape, tn, p[u + ".w_q"]);
  const Var k = ops::matmul(tape, tn, p[u + ".w_k"]);
  const Var v = ops::matmul(tape, tn, p[u + ".w_v"]);
  const Var attn = attention_scores(tape, q, k);
  if (ctx && ctx->probe && ctx->probe->block == ctx->block &&
      ctx->probe->orientation == ctx->orientation) {
    const Tensor<T>& a = tape.value(attn);
    const std::size_t len = a.dim(1);
    if (ctx->probe->group >= a.dim(0)) {
      throw ConfigError("attention probe: group " + std::to_string(ctx->probe->group) +
                        " out of range (" + std::to_string(a.dim(0)) + " groups)");
    }
    Tensor<T> m({len, len});
    std::copy_n(a.data() + ctx->probe->group * len * len, len * len, m.data());
    ctx->probe->matrix = std::move(m);
    ctx->probe->dims = ctx->dims;
  }
  const Var t1 = ops::add(tape, ops::batched_matmul(tape, attn, v, false), t);
  const Var n2 = ops::layer_norm(tape, t1, p[u + ".ln2.gamma"], p[u + ".ln2.beta"], eps);
  Var hidden = ops::add_bias(tape, ops::matmul(tape, n2, p[u + ".mlp.fc1.weight"]), p[u + ".mlp.fc1.bias"]);
  hidden = ops::leaky_relu(tape, hidden, slope);
  const Var mlp = ops::add_bias(tape, ops::matmul(tape, hidden, p[u + ".mlp.fc2.weight"]), p[u + ".mlp.fc2.bias"]);
  const Var t2 = ops::add(tape, mlp, t1);
  return ops::matmul(tape, t2, p[u + ".w_out"]);
}

/// [U*V, C, H, W] -> EPI tokens [G, L, C].
template <typename T>
Var to_tokens(Tape<T>& tape, Var x, LfDims d, std::size_t c, Orientation o) {
  const Var five = ops::reshape(tape, x, {d.u, d.v, c, d.h, d.w});
  if (o == Orientation::horizontal) {
    return ops::reshape(tape, ops::permute(tape, five, {0, 3, 1, 4, 2}), {d.u * d.h, d.v * d.w, c});
  }
  return ops::reshape(tape, ops::permute(tape, five, {1, 4, 0, 3, 2}), {d.v * d.w, d.u * d.h, c});
}

/// EPI tokens [G, L, C] -> [U*V, C, H, W].
template <typename T>
Var from_tokens(Tape<T>& tape, Var tokens, LfDims d, std::size_t c, Orientation o) {
  Var five;
  if (o == Orientation::horizontal) {
    five = ops::permute(tape, ops::reshape(tape, tokens, {d.u, d.h, d.v, d.w, c}), {0, 2, 4, 1, 3});
  } else {
    five = ops::permute(tape, ops::reshape(tape, tokens, {d.v, d.w, d.u, d.h, c}), {2, 0, 4, 3, 1});
  }
  return ops::reshape(tape, five, {d.views(), c, d.h, d.w});
}

/// Cascaded 3x3 convolutions on EPI slices, replacing the transformer unit.
template <typename T>
Var epi_conv_unit(Tape<T>& tape, const Binding<T>& p, const std::string& u, Var x, LfDims d,
                  std::size_t c, Orientation o) {
  const T slope = static_cast<T>(p.config().leaky_slope);
  const Var five = ops::reshape(tape, x, {d.u, d.v, c, d.h, d.w});
  Var epi;
  if (o == Orientation::horizontal) {
    epi = ops::reshape(tape, ops::permute(tape, five, {0, 3, 2, 1, 4}), {d.u * d.h, c, d.v, d.w});
  } else {
    epi = ops::reshape(tape, ops::permute(tape, five, {1, 4, 2, 0, 3}), {d.v * d.w, c, d.u, d.h});
  }
  for (const char* stage : {".conv0", ".conv1"}) {
    epi = ops::leaky_relu(tape, conv(tape, p, u + stage, epi, ops::Padding::same), slope);
  }
  Var back;
  if (o == Orientation::horizontal) {
    back = ops::permute(tape, ops::reshape(tape, epi, {d.u, d.h, c, d.v, d.w}), {0, 3, 2, 1, 4});
  } else {
    back = ops::permute(tape, ops::reshape(tape, epi, {d.v, d.w, c, d.u, d.h}), {3, 0, 2, 4, 1});
  }
  return ops::reshape(tape, back, {d.views(), c, d.h, d.w});
}

/// One orientation of a non-local block: EPI unit, SpatialConv, stage skip.
template <typename T>
Var epi_stage(Tape<T>& tape, const Binding<T>& p, std::size_t block, Orientation o, Var x, LfDims d,
              ForwardContext<T>* ctx = nullptr) {
  const EpitConfig& cfg = p.config();
  const std::size_t c = cfg.channels;
  const std::string unit = unit_prefix(cfg, block, o == Orientation::horizontal);
  Var y;
  if (cfg.use_transformer) {
    ForwardContext<T> local{ctx ? ctx->probe : nullptr, block, o, d};
    y = from_tokens(tape, basic_transformer(tape, p, unit, to_tokens(tape, x, d, c, o), &local), d, c, o);
  } else {
    y = epi_conv_unit(tape, p, unit, x, d, c, o);
  }
  if (cfg.use_spatial_conv) y = spatial_conv(tape, p, "block" + std::to_string(block) + ".local", y);
  if (cfg.stage_residual) y = ops::add(tape, y, x);
  return y;
}

/// Horizontal then vertical stage (order configurable), skipping disabled ones.
template <typename T>
Var non_local_block(Tape<T>& tape, const Binding<T>& p, std::size_t block, Var x, LfDims d,
                    ForwardContext<T>* ctx = nullptr) {
  const EpitConfig& cfg = p.config();
  const Orientation first = cfg.horizontal_first ? Orientation::horizontal : Orientation::vertical;
  const Orientation second = cfg.horizontal_first ? Orientation::vertical : Orientation::horizontal;
  for (Orientation o : {first, second}) {
    const bool enabled = o == Orientation::horizontal ? cfg.use_horizontal : cfg.use_vertical;
    if (enabled) x = epi_stage(tape, p, block, o, x, d, ctx);
  }
  return x;
}

/// Stem and all non-local blocks: [U*V, Cin, H, W] -> [U*V, C, H, W].
template <typename T>
Var body(Tape<T>& tape, const Binding<T>& p, Var x, LfDims d, ForwardContext<T>* ctx = nullptr) {
  x = spatial_conv(tape, p, "stem", x);
  for (std::size_t b = 0; b < p.config().num_blocks; ++b) x = non_local_block(tape, p, b, x, d, ctx);
  return x;
}

/// 1x1 conv to C*alpha^2, pixel shuffle, LeakyReLU, 3x3 conv to output channels.
template <typename T>
Var spatial_head(Tape<T>& tape, const Binding<T>& p, Var x) {
  const EpitConfig& cfg = p.config();
  Var y = conv(tape, p, "head.up", x, ops::Padding::none);
  y = ops::leaky_relu(tape, ops::pixel_shuffle(tape, y, cfg.alpha), static_cast<T>(cfg.leaky_slope));
  return conv(tape, p, "head.out", y, ops::Padding::same);
}

/// Angular upsampler for 2x2 inputs: 2x2 angular conv -> (1,1), 1x1 conv to
/// 49C channels, angular pixel shuffle -> (7,7), 3x3 spatial conv.
template <typename T>
Var angular_head(Tape<T>& tape, const Binding<T>& p, Var x, LfDims d) {
  const EpitConfig& cfg = p.config();
  const std::size_t c = cfg.channels;
  const T slope = static_cast<T>(cfg.leaky_slope);
  if (d.u != 2 || d.v != 2) {
    throw ShapeError("angular_head: expected 2x2 views, got " + std::to_string(d.u) + "x" +
                     std::to_string(d.v));
  }
  // [4, C, H, W] -> per-pixel angular patches [H*W, C, 2, 2]
  Var ang = ops::permute(tape, ops::reshape(tape, x, {2, 2, c, d.h, d.w}), {3, 4, 2, 0, 1});
  ang = ops::reshape(tape, ang, {d.h * d.w, c, 2, 2});
  ang = ops::leaky_relu(tape, conv(tape, p, "head.ang", ang, ops::Padding::none), slope);
  // [H*W, C, 1, 1] -> [1, C, H, W]
  Var down = ops::permute(tape, ops::reshape(tape, ang, {d.h, d.w, c}), {2, 0, 1});
  down = ops::reshape(tape, down, {1, c, d.h, d.w});
  const std::size_t n = kAsrOutViews;
  Var up = conv(tape, p, "head.expand", down, ops::Padding::none);
  // channel index c*n*n + i*n + j -> view (i, j), channel c
  up = ops::permute(tape, ops::reshape(tape, up, {c, n, n, d.h, d.w}), {1, 2, 0, 3, 4});
  up = ops::leaky_relu(tape, ops::reshape(tape, up, {n * n, c, d.h, d.w}), slope);
  return conv(tape, p, "head.out", up, ops::Padding::same);
}

}  // namespace net

/// Full network on a feature tensor [U*V, Cin, H, W]. Returns
/// [U*V, Cout, aH, aW] for spatial SR or [49, Cout, H, W] for angular SR.
template <typename T>
Var epit_graph(Tape<T>& tape, const Binding<T>& p, Var input, LfDims d, AttentionProbe<T>* probe = nullptr) {
  const EpitConfig& cfg = p.config();
  const Shape& s = tape.shape(input);
  if (s.size() != 4 || s[0] != d.views() || s[1] != cfg.in_channels || s[2] != d.h || s[3] != d.w) {
    throw ShapeError("epit: input " + shape_str(s) + " does not match the configured " +
                     std::to_string(cfg.in_channels) + "-channel light field");
  }
  ForwardContext<T> ctx{probe, 0, Orientation::horizontal, d};
  const Var features = net::body(tape, p, input, d, &ctx);
  return cfg.mode == Mode::spatial_sr ? net::spatial_head(tape, p, features)
                                      : net::angular_head(tape, p, features, d);
}

/// LightField (U, V, H, W, C) -> tensor [U*V, C, H, W].
template <typename T, typename S>
Tensor<T> lf_to_tensor(const BasicLightField<S>& lf) {
  const LfExtents& e = lf.extents();
  Tensor<T> out({e.u * e.v, e.c, e.h, e.w});
  std::size_t i = 0;
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t c = 0; c < e.c; ++c)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w) out[i++] = static_cast<T>(lf(u, v, h, w, c));
  return out;
}

/// Tensor [U*V, C, H, W] -> LightField (U, V, H, W, C).
template <typename S, typename T>
BasicLightField<S> tensor_to_lf(const Tensor<T>& t, std::size_t u_views, std::size_t v_views) {
  if (t.rank() != 4 || t.dim(0) != u_views * v_views) {
    throw ShapeError("tensor_to_lf: tensor " + shape_str(t.shape()) + " is not " +
                     std::to_string(u_views) + "x" + std::to_string(v_views) + " views");
  }
  const std::size_t c = t.dim(1);
  const std::size_t h = t.dim(2);
  const std::size_t w = t.dim(3);
  BasicLightField<S> lf({u_views, v_views, h, w, c});
  std::size_t i = 0;
  for (std::size_t u = 0; u < u_views; ++u)
    for (std::size_t v = 0; v < v_views; ++v)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) lf(u, v, y, x, ch) = static_cast<S>(t[i++]);
  return lf;
}

/// Super-resolves a light field with fixed weights.
template <typename T>
BasicLightField<T> epit_forward(const BasicLightField<T>& lr, const EpitWeights<T>& weights,
                                AttentionProbe<T>* probe = nullptr) {
  const EpitConfig& cfg = weights.config();
  const LfExtents& e = lr.extents();
  if (e.c != cfg.in_channels) {
    throw ShapeError("epit_forward: light field has " + std::to_string(e.c) +
                     " channels, model expects " + std::to_string(cfg.in_channels));
  }
  Tape<T> tape(false);
  const Binding<T> p(tape, weights, false);
  const LfDims d{e.u, e.v, e.h, e.w};
  const Var out = epit_graph(tape, p, tape.constant(lf_to_tensor<T>(lr)), d, probe);
  if (cfg.mode == Mode::spatial_sr) return tensor_to_lf<T>(tape.value(out), e.u, e.v);
  return tensor_to_lf<T>(tape.value(out), kAsrOutViews, kAsrOutViews);
}

}  // namespace epit
