// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks of every differentiable op and of small end-to-end
// networks, shared by the test suite and the `gradcheck` subcommand.

#include <functional>
#include <string>
#include <vector>

#include "epit/gradcheck.hpp"
#include "epit/network.hpp"
#include "epit/ops.hpp"
#include "epit/rng.hpp"

namespace epit {

namespace gradcheck_detail {

inline Tensor<double> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

/// <y, w> for a fixed random w, so every output element carries its own weight.
inline Var project(Tape<double>& t, Var y, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = t.value(y).size();
  const Var w = t.constant(uniform_tensor({n, 1}, rng));
  return ops::reshape(t, ops::matmul(t, ops::reshape(t, y, {1, n}), w), {1});
}

/// Parameters of `w` (then any extra inputs) as one input list.
inline std::vector<Tensor<double>> with_params(const EpitWeights<double>& w,
                                               std::vector<Tensor<double>> extra) {
  std::vector<Tensor<double>> out(w.values().begin(), w.values().end());
  for (auto& e : extra) out.push_back(std::move(e));
  return out;
}

}  // namespace gradcheck_detail

/// One check per differentiable primitive.
inline std::vector<GradCheckResult> op_gradient_suite(std::uint64_t seed = 1, GradCheckOptions opt = {}) {
  using gradcheck_detail::project;
  using gradcheck_detail::uniform_tensor;
  using V = std::vector<Var>;
  Rng rng(seed);
  auto u = [&rng](Shape s, double lo = -1.0, double hi = 1.0) { return uniform_tensor(std::move(s), rng, lo, hi); };
  std::vector<GradCheckResult> out;
  out.push_back(check_gradients("add", [](Tape<double>& t, V v) { return project(t, ops::add(t, v[0], v[1]), 1); },
                                {u({2, 3}), u({2, 3})}, opt));
  out.push_back(check_gradients("add_bias", [](Tape<double>& t, V v) { return project(t, ops::add_bias(t, v[0], v[1]), 2); },
                                {u({3, 4}), u({4})}, opt));
  out.push_back(check_gradients("scale", [](Tape<double>& t, V v) { return project(t, ops::scale(t, v[0], -1.7), 3); },
                                {u({5})}, opt));
  out.push_back(check_gradients("sum", [](Tape<double>& t, V v) { return ops::sum(t, v[0]); }, {u({2, 2})}, opt));
  out.push_back(check_gradients("reshape", [](Tape<double>& t, V v) { return project(t, ops::reshape(t, v[0], {3, 2}), 4); },
                                {u({2, 3})}, opt));
  out.push_back(check_gradients("permute", [](Tape<double>& t, V v) { return project(t, ops::permute(t, v[0], {2, 0, 1}), 5); },
                                {u({2, 3, 4})}, opt));
  out.push_back(check_gradients("matmul", [](Tape<double>& t, V v) { return project(t, ops::matmul(t, v[0], v[1]), 6); },
                                {u({2, 3, 4}), u({4, 2})}, opt));
  out.push_back(check_gradients("batched_matmul", [](Tape<double>& t, V v) {
    return project(t, ops::batched_matmul(t, v[0], v[1], false), 7);
  }, {u({2, 3, 4}), u({2, 4, 3})}, opt));
  out.push_back(check_gradients("batched_matmul_t", [](Tape<double>& t, V v) {
    return project(t, ops::batched_matmul(t, v[0], v[1], true), 8);
  }, {u({2, 3, 4}), u({2, 5, 4})}, opt));
  out.push_back(check_gradients("softmax_last", [](Tape<double>& t, V v) { return project(t, ops::softmax_last(t, v[0]), 9); },
                                {u({3, 5}, -3.0, 3.0)}, opt));
  out.push_back(check_gradients("layer_norm", [](Tape<double>& t, V v) {
    return project(t, ops::layer_norm(t, v[0], v[1], v[2], 1e-5), 10);
  }, {u({3, 6}), u({6}), u({6})}, opt));
  out.push_back(check_gradients("leaky_relu", [](Tape<double>& t, V v) { return project(t, ops::leaky_relu(t, v[0], 0.1), 11); },
                                {u({4, 4})}, opt));
  out.push_back(check_gradients("conv2d_same", [](Tape<double>& t, V v) {
    return project(t, ops::conv2d(t, v[0], v[1], v[2], ops::Padding::same), 12);
  }, {u({2, 2, 5, 4}), u({3, 2, 3, 3}), u({3})}, opt));
  out.push_back(check_gradients("conv2d_none", [](Tape<double>& t, V v) {
    return project(t, ops::conv2d(t, v[0], v[1], v[2], ops::Padding::none), 13);
  }, {u({1, 3, 4, 4}), u({2, 3, 2, 2}), u({2})}, opt));
  out.push_back(check_gradients("pixel_shuffle", [](Tape<double>& t, V v) { return project(t, ops::pixel_shuffle(t, v[0], 2), 14); },
                                {u({1, 8, 2, 3})}, opt));
  out.push_back(check_gradients("l1_loss", [](Tape<double>& t, V v) { return ops::l1_loss(t, v[0], v[1]); },
                                {u({3, 4}), u({3, 4})}, opt));
  return out;
}

/// Basic-Transformer unit over random tokens (L = 6, C = D = 8) under an L1 objective.
inline GradCheckResult transformer_gradient_check(std::uint64_t seed = 2, GradCheckOptions opt = {}) {
  EpitConfig cfg = EpitConfig::micro();
  EpitWeights<double> w(cfg);
  xavier_init(w, seed);
  Rng rng(seed + 1);
  const std::string unit = unit_prefix(cfg, 0, true);
  // only the unit's own buffers are inputs
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.layout()[i].name.rfind(unit + ".", 0) == 0) idx.push_back(i);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i : idx) inputs.push_back(w.value(i));
  // non-trivial layer-norm affine parameters
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const ParamKind kind = w.layout()[idx[k]].kind;
    if (kind != ParamKind::conv_weight && kind != ParamKind::linear_weight)
      for (double& x : inputs[k].values()) x += rng.uniform(-0.5, 0.5);
  }
  inputs.push_back(gradcheck_detail::uniform_tensor({1, 6, cfg.channels}, rng));
  inputs.push_back(gradcheck_detail::uniform_tensor({1, 6, cfg.channels}, rng));
  return check_gradients("basic_transformer", [&](Tape<double>& t, std::vector<Var> v) {
    std::vector<Var> vars(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) vars[i] = t.constant(w.value(i));
    for (std::size_t k = 0; k < idx.size(); ++k) vars[idx[k]] = v[k];
    const Binding<double> p(w, vars);
    const Var y = net::basic_transformer(t, p, unit, v[idx.size()]);
    return ops::l1_loss(t, y, v[idx.size() + 1]);
  }, std::move(inputs), opt);
}

/// Every parameter and the input of a whole network under an L1 objective.
inline GradCheckResult model_gradient_check(const std::string& name, const EpitConfig& cfg, LfDims dims,
                                            std::uint64_t seed, GradCheckOptions opt = {}) {
  EpitWeights<double> w(cfg);
  xavier_init(w, seed);
  Rng rng(seed + 1);
  // perturb biases and norm parameters away from their initial constants
  for (std::size_t i = 0; i < w.size(); ++i) {
    const ParamKind kind = w.layout()[i].kind;
    if (kind != ParamKind::conv_weight && kind != ParamKind::linear_weight)
      for (double& x : w.value(i).values()) x += rng.uniform(-0.1, 0.1);
  }
  const Tensor<double> input = gradcheck_detail::uniform_tensor({dims.views(), cfg.in_channels, dims.h, dims.w}, rng, 0.0, 1.0);
  Tensor<double> target;
  {
    Tape<double> t(false);
    const Binding<double> p(t, w, false);
    target = t.value(epit_graph(t, p, t.constant(input), dims));
    for (double& x : target.values()) x += rng.uniform(-0.5, 0.5);
  }
  const std::size_t np = w.size();
  return check_gradients(name, [&](Tape<double>& t, std::vector<Var> v) {
    const Binding<double> p(w, std::vector<Var>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(np)));
    return ops::l1_loss(t, epit_graph(t, p, v[np], dims), t.constant(target));
  }, gradcheck_detail::with_params(w, {input}), opt);
}

/// The micro configuration: C = D = 8, one block, 2x2 views, 8x8 patches.
inline GradCheckResult micro_model_gradient_check(std::uint64_t seed = 3, GradCheckOptions opt = {}) {
  return model_gradient_check("epit_micro", EpitConfig::micro(), {2, 2, 8, 8}, seed, opt);
}

/// Micro network with the angular (2x2 -> 7x7) head.
inline GradCheckResult micro_asr_gradient_check(std::uint64_t seed = 4, GradCheckOptions opt = {}) {
  EpitConfig cfg = EpitConfig::micro();
  cfg.mode = Mode::angular_sr;
  return model_gradient_check("epit_micro_asr", cfg, {2, 2, 4, 4}, seed, opt);
}

}  // namespace epit
