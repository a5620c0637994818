// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "epit/error.hpp"
#include "epit/tensor.hpp"

namespace epit {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;

  bool valid() const { return id != npos; }
};

/// Reverse-mode record. Values are appended in evaluation order, so node ids
/// are a topological order; backward walks them in reverse.
///
/// A tape is single-writer: record on one thread, then call backward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

#ifdef NDEBUG
  static constexpr bool kCheckFiniteDefault = false;
#else
  static constexpr bool kCheckFiniteDefault = true;
#endif

  explicit Tape(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}

  /// When enabled, ops with a non-differentiable point fold every branch
  /// decision into branch_signature(), so two evaluations can be compared for
  /// kink crossings.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void note_branch(unsigned code) {
    branch_signature_ = (branch_signature_ ^ (code + 1)) * 0x100000001b3ULL;
  }
  std::uint64_t branch_signature() const { return branch_signature_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr); }

  /// Leaf whose gradient is accumulated by backward().
  Var parameter(Tensor<T> value) { return push(std::move(value), true, {}, nullptr); }

  /// Records an op output. The backward rule runs only when the output lies on
  /// a path to the loss and some input requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward,
             const char* op = "op") {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    if (check_finite_) {
      for (const T& x : value.values()) {
        if (!std::isfinite(static_cast<double>(x))) {
          throw NumericError(std::string("non-finite value produced by ") + op);
        }
      }
    }
    return push(std::move(value), needs, inputs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of v, allocated as zeros on first use.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.grad) n.grad.emplace(n.value.shape(), T{0});
    return *n.grad;
  }

  bool has_grad(Var v) const { return nodes_.at(v.id).grad.has_value(); }

  /// Gradient of the last backward() w.r.t. v; zeros if no path reached v.
  Tensor<T> gradient(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad ? *n.grad : Tensor<T>(n.value.shape(), T{0});
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter.
  void backward(Var loss) {
    if (nodes_.at(loss.id).value.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape(loss)));
    }
    for (Node& n : nodes_) n.grad.reset();
    grad(loss)[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.grad || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  /// Gradient of node `id`; only valid inside a backward rule.
  const Tensor<T>& output_grad(std::size_t id) const { return *nodes_[id].grad; }
  const Tensor<T>& value_at(std::size_t id) const { return nodes_[id].value; }

  /// Accumulation target for an input's gradient, or nullptr when the input
  /// does not require one.
  T* accumulate_into(Var input) {
    if (!nodes_[input.id].requires_grad) return nullptr;
    return grad(input).data();
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, std::initializer_list<Var>, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::nullopt, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool check_finite_;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

}  // namespace epit
