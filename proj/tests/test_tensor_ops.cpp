// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "epit/gradcheck.hpp"
#include "epit/ops.hpp"
#include "test_util.hpp"

using namespace epit;
using epit::testing::max_abs_diff;
using epit::testing::random_tensor;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                          bool same) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long ph = same ? long(kh / 2) : 0, pw = same ? long(kw / 2) : 0;
  const std::size_t OH = same ? H : H - kh + 1, OW = same ? W : W - kw + 1;
  Tensor<double> out({B, Co, OH, OW});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t z = 0; z < OW; ++z) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long sy = long(y + i) - ph, sz = long(z + j) - pw;
                if (sy < 0 || sz < 0 || sy >= long(H) || sz >= long(W)) continue;
                acc += w[((o * Ci + c) * kh + i) * kw + j] * x[((n * Ci + c) * H + sy) * W + sz];
              }
          out[((n * Co + o) * OH + y) * OW + z] = acc;
        }
  return out;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var weighted_sum(Tape<double>& t, Var y, std::uint64_t seed = 99) {
  const Tensor<double> w = random_tensor<double>(t.shape(y), seed);
  Var wv = t.constant(w);
  Var flat = ops::reshape(t, y, {1, t.value(y).size()});
  Var col = ops::reshape(t, wv, {w.size(), 1});
  return ops::reshape(t, ops::matmul(t, flat, col), {1});
}

void expect_grad_ok(const GradCheckResult& r) {
  EXPECT_TRUE(r.passed()) << r.name << ": max rel " << r.max_rel_error << " at " << r.worst;
}

}  // namespace

TEST(Ops, MatmulExample) {
  Tape<double> t;
  Var a = t.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Var b = t.constant(Tensor<double>({2, 1}, {5, 6}));
  EXPECT_EQ(t.value(ops::matmul(t, a, b)), Tensor<double>({2, 1}, {17, 39}));
}

TEST(Ops, MatmulMatchesNaiveOracle) {
  Tape<double> t;
  const auto a = random_tensor<double>({7, 5}, 1);
  const auto b = random_tensor<double>({5, 3}, 2);
  EXPECT_LT(max_abs_diff(t.value(ops::matmul(t, t.constant(a), t.constant(b))), naive_matmul(a, b)),
            1e-12);
}

TEST(Ops, BatchedMatmulTransposeMatchesOracle) {
  Tape<double> t;
  const auto a = random_tensor<double>({3, 4, 5}, 3);
  const auto b = random_tensor<double>({3, 6, 5}, 4);
  const auto c = t.value(ops::batched_matmul(t, t.constant(a), t.constant(b), true));
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < 5; ++p) acc += a[(g * 4 + i) * 5 + p] * b[(g * 6 + j) * 5 + p];
        EXPECT_NEAR(c[(g * 4 + i) * 6 + j], acc, 1e-12);
      }
}

TEST(Ops, SoftmaxExamples) {
  Tape<double> t;
  const auto eq = t.value(ops::softmax_last(t, t.constant(Tensor<double>({1, 3}, {2, 2, 2}))));
  for (double p : eq.values()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const auto big = t.value(ops::softmax_last(t, t.constant(Tensor<double>({1, 2}, {1000, 0}))));
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(big[1]));
  const auto shifted =
      t.value(ops::softmax_last(t, t.constant(Tensor<double>({1, 3}, {1001, 1002, 1003}))));
  const auto base = t.value(ops::softmax_last(t, t.constant(Tensor<double>({1, 3}, {1, 2, 3}))));
  EXPECT_LT(max_abs_diff(shifted, base), 1e-12);
}

TEST(Ops, LayerNormExample) {
  Tape<double> t;
  const auto y = t.value(ops::layer_norm(t, t.constant(Tensor<double>({1, 2}, {-1, 1})),
                                         t.constant(Tensor<double>({2}, {1, 1})),
                                         t.constant(Tensor<double>({2}, {0, 0})), 1e-5));
  EXPECT_NEAR(y[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Ops, LeakyReluValues) {
  Tape<double> t;
  const auto y = t.value(ops::leaky_relu(t, t.constant(Tensor<double>({3}, {-2, 0, 3})), 0.1));
  EXPECT_EQ(y, Tensor<double>({3}, {-0.2, 0, 3}));
}

TEST(Ops, LeakyReluGradientAtZeroIsOne) {
  Tape<double> t;
  Var x = t.parameter(Tensor<double>({1}, {0.0}));
  t.backward(ops::leaky_relu(t, x, 0.1));
  EXPECT_EQ(t.gradient(x)[0], 1.0);
}

TEST(Ops, Conv2dMatchesNestedLoopOracle) {
  for (bool same : {true, false}) {
    Tape<double> t;
    const auto x = random_tensor<double>({2, 3, 6, 5}, 5);
    const auto w = random_tensor<double>({4, 3, 3, 3}, 6);
    const auto b = random_tensor<double>({4}, 7);
    const auto y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b),
                                       same ? ops::Padding::same : ops::Padding::none));
    EXPECT_LT(max_abs_diff(y, naive_conv(x, w, &b, same)), 1e-12);
  }
  Tape<double> t;
  const auto x = random_tensor<double>({1, 2, 4, 4}, 8);
  const auto w = random_tensor<double>({3, 2, 2, 2}, 9);
  const auto y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), Var{}, ops::Padding::none));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  EXPECT_LT(max_abs_diff(y, naive_conv(x, w, nullptr, false)), 1e-12);
}

TEST(Ops, Conv2dIsCrossCorrelation) {
  Tape<double> t;
  Tensor<double> x({1, 1, 3, 3}, 0.0);
  x[4] = 1.0;  // centre impulse
  Tensor<double> w({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), Var{}, ops::Padding::same));
  // an impulse reproduces the flipped kernel under cross-correlation
  EXPECT_EQ(y, Tensor<double>({1, 1, 3, 3}, {9, 8, 7, 6, 5, 4, 3, 2, 1}));
}

TEST(Ops, Conv2dShapeErrors) {
  Tape<double> t;
  Var x = t.constant(Tensor<double>({1, 2, 4, 4}));
  EXPECT_THROW(ops::conv2d(t, x, t.constant(Tensor<double>({1, 3, 3, 3})), Var{}, ops::Padding::same),
               ShapeError);
  EXPECT_THROW(ops::conv2d(t, x, t.constant(Tensor<double>({1, 2, 2, 2})), Var{}, ops::Padding::same),
               ShapeError);
}

TEST(Ops, PixelShuffleIndexMap) {
  Tensor<double> x({1, 4, 2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(i);
  const auto y = ops::pixel_shuffle(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 6}));
  for (std::size_t hh = 0; hh < 4; ++hh)
    for (std::size_t ww = 0; ww < 6; ++ww) {
      const std::size_t c = (hh % 2) * 2 + ww % 2;
      EXPECT_EQ(y[hh * 6 + ww], x[(c * 2 + hh / 2) * 3 + ww / 2]);
    }
  EXPECT_EQ(ops::pixel_unshuffle(y, 2), x);
  const auto z = random_tensor<double>({2, 3, 6, 4}, 10);
  EXPECT_EQ(ops::pixel_shuffle(ops::pixel_unshuffle(z, 2), 2), z);
}

TEST(Ops, L1Value) {
  Tape<double> t;
  const auto l = t.value(ops::l1_loss(t, t.constant(Tensor<double>({1, 3}, {1, 2, 3})),
                                      t.constant(Tensor<double>({1, 3}, {1, 0, 4}))));
  EXPECT_DOUBLE_EQ(l[0], 1.0);
}

TEST(Ops, L1GradientIsZeroOnTies) {
  Tape<double> t;
  Var p = t.parameter(Tensor<double>({3}, {1, 2, 3}));
  Var q = t.constant(Tensor<double>({3}, {1, 0, 4}));
  t.backward(ops::l1_loss(t, p, q));
  EXPECT_EQ(t.gradient(p), Tensor<double>({3}, {0, 1.0 / 3, -1.0 / 3}));
}

TEST(Tape, DoubleConsumptionAccumulates) {
  Tape<double> t;
  Var x = t.parameter(Tensor<double>({2}, {1.5, -2}));
  Var y = ops::add(t, x, x);
  Var z = ops::add(t, y, ops::scale(t, x, 3.0));
  t.backward(ops::sum(t, z));
  EXPECT_EQ(t.gradient(x), Tensor<double>({2}, {5, 5}));
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tape<double> t;
  Var x = t.parameter(Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, RepeatedBackwardDoesNotAccumulateAcrossCalls) {
  Tape<double> t;
  Var x = t.parameter(Tensor<double>({1}, {2}));
  Var l = ops::sum(t, ops::scale(t, x, 4.0));
  t.backward(l);
  t.backward(l);
  EXPECT_EQ(t.gradient(x)[0], 4.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape<double> t;
  Var c = t.constant(Tensor<double>({1}, {2}));
  Var x = t.parameter(Tensor<double>({1}, {3}));
  t.backward(ops::sum(t, ops::add(t, c, x)));
  EXPECT_FALSE(t.has_grad(c));
  EXPECT_EQ(t.gradient(x)[0], 1.0);
}

TEST(Tape, FiniteCheckNamesTheOp) {
  Tape<double> t(true);
  Var x = t.constant(Tensor<double>({1}, {1e308}));
  try {
    ops::scale(t, x, 1e10);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(GradCheck, EveryPrimitive) {
  using V = std::vector<Var>;
  expect_grad_ok(check_gradients("add", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::add(t, v[0], v[1]));
  }, {random_tensor<double>({2, 3}, 1), random_tensor<double>({2, 3}, 2)}));
  expect_grad_ok(check_gradients("add_bias", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::add_bias(t, v[0], v[1]));
  }, {random_tensor<double>({2, 3, 4}, 3), random_tensor<double>({4}, 4)}));
  expect_grad_ok(check_gradients("permute", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::permute(t, v[0], {2, 0, 3, 1}));
  }, {random_tensor<double>({2, 3, 4, 2}, 5)}));
  expect_grad_ok(check_gradients("matmul", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::matmul(t, v[0], v[1]));
  }, {random_tensor<double>({2, 3, 4}, 6), random_tensor<double>({4, 5}, 7)}));
  for (bool tb : {false, true}) {
    expect_grad_ok(check_gradients("batched_matmul", [tb](Tape<double>& t, V v) {
      return weighted_sum(t, ops::batched_matmul(t, v[0], v[1], tb));
    }, {random_tensor<double>({2, 3, 4}, 8), random_tensor<double>(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, 9)}));
  }
  expect_grad_ok(check_gradients("softmax", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::softmax_last(t, v[0]));
  }, {random_tensor<double>({3, 5}, 10, -3, 3)}));
  expect_grad_ok(check_gradients("layer_norm", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::layer_norm(t, v[0], v[1], v[2], 1e-5));
  }, {random_tensor<double>({3, 6}, 11), random_tensor<double>({6}, 12), random_tensor<double>({6}, 13)}));
  expect_grad_ok(check_gradients("leaky_relu", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::leaky_relu(t, v[0], 0.1));
  }, {random_tensor<double>({4, 5}, 14)}));
  for (auto pad : {ops::Padding::same, ops::Padding::none}) {
    expect_grad_ok(check_gradients("conv2d", [pad](Tape<double>& t, V v) {
      return weighted_sum(t, ops::conv2d(t, v[0], v[1], v[2], pad));
    }, {random_tensor<double>({2, 2, 5, 4}, 15), random_tensor<double>({3, 2, 3, 3}, 16),
        random_tensor<double>({3}, 17)}));
  }
  expect_grad_ok(check_gradients("pixel_shuffle", [](Tape<double>& t, V v) {
    return weighted_sum(t, ops::pixel_shuffle(t, v[0], 2));
  }, {random_tensor<double>({1, 8, 2, 3}, 18)}));
  expect_grad_ok(check_gradients("l1_loss", [](Tape<double>& t, V v) {
    return ops::l1_loss(t, v[0], v[1]);
  }, {random_tensor<double>({3, 4}, 19), random_tensor<double>({3, 4}, 20)}));
}

TEST(GradCheck, ReportsAMismatch) {
  // A deliberately wrong rule: forward doubles, backward claims the identity.
  auto bad = [](Tape<double>& t, std::vector<Var> v) {
    Tensor<double> out = t.value(v[0]);
    for (double& x : out.values()) x *= 2;
    Var y = t.record(std::move(out), {v[0]}, [x = v[0]](Tape<double>& tp, std::size_t id) {
      if (double* g = tp.accumulate_into(x)) g[0] += tp.output_grad(id)[0];
    });
    return ops::sum(t, y);
  };
  const auto r = check_gradients("bad", bad, {Tensor<double>({1}, {0.5})});
  EXPECT_FALSE(r.passed());
  EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
}
