// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epit/tape.hpp"
#include "epit/tensor.hpp"

namespace epit {

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "input[i]" of the largest relative error
  double tolerance = 0.0;

  bool passed() const { return checked > 0 && max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  /// When the +-step stencil crosses a kink (a LeakyReLU or L1 branch flips),
  /// the element is re-measured with the step divided by 10, up to this many
  /// times.
  int kink_retries = 3;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor), so gradients near the
  /// round-off level of the difference quotient are compared in absolute terms.
  double floor = 1e-5;
};

/// Compares reverse-mode gradients of a scalar objective against central
/// differences for every element of every input. `objective` receives a fresh
/// tape and the input vars and must return a scalar var.
template <typename Objective>
GradCheckResult check_gradients(std::string name, Objective&& objective,
                                std::vector<Tensor<double>> inputs, GradCheckOptions opt = {}) {
  GradCheckResult res;
  res.name = std::move(name);
  res.tolerance = opt.tolerance;

  std::vector<Tensor<double>> analytic;
  std::uint64_t base_signature = 0;
  {
    Tape<double> tape(true);
    tape.track_branches(true);
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.parameter(x));
    const Var loss = objective(tape, vars);
    base_signature = tape.branch_signature();
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.gradient(v));
  }

  struct Eval {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape(true);
    tape.track_branches(true);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const double value = tape.value(objective(tape, vars))[0];
    return Eval{value, tape.branch_signature()};
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      double step = opt.step;
      double numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        inputs[k][i] = saved + step;
        const Eval up = evaluate(inputs);
        inputs[k][i] = saved - step;
        const Eval down = evaluate(inputs);
        inputs[k][i] = saved;
        numeric = (up.value - down.value) / (2.0 * step);
        const bool smooth = up.signature == base_signature && down.signature == base_signature;
        if (smooth || attempt >= opt.kink_retries) break;
        step /= 10.0;
      }
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.floor});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (res.checked == 0 || rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace epit
