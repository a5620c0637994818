// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epit/synthetic.hpp"
#include "epit/train.hpp"
#include "test_util.hpp"

using namespace epit;
using epit::testing::random_image;
using epit::testing::random_lf;

namespace {

// Texture transforms used as oracles for the light-field augmentations.
Image<float> mirror_columns(const Image<float>& t) {
  Image<float> o(t.height(), t.width());
  for (std::size_t x = 0; x < t.height(); ++x)
    for (std::size_t y = 0; y < t.width(); ++y) o(x, y) = t(x, t.width() - 1 - y);
  return o;
}

Image<float> mirror_rows(const Image<float>& t) {
  Image<float> o(t.height(), t.width());
  for (std::size_t x = 0; x < t.height(); ++x)
    for (std::size_t y = 0; y < t.width(); ++y) o(x, y) = t(t.height() - 1 - x, y);
  return o;
}

// rot(t)(x, y) = t(y, T - 1 - x) on a square texture
Image<float> rotate_texture(const Image<float>& t) {
  const std::size_t n = t.height();
  Image<float> o(n, n);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y) o(x, y) = t(y, n - 1 - x);
  return o;
}

TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.hr_patch = 8;
  tc.batch_size = 2;
  tc.epochs = 2;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST(Patches, GridTilingCountAndExtents) {
  TrainConfig tc;
  tc.hr_patch = 64;
  const LightField scene(LfExtents{5, 5, 128, 128, 1}, 0.5f);
  const auto patches = make_patches(scene, tc);
  ASSERT_EQ(patches.size(), 4u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.hr.extents(), (LfExtents{5, 5, 64, 64, 1}));
    EXPECT_EQ(p.lr.extents(), (LfExtents{5, 5, 32, 32, 1}));
  }
}

TEST(Patches, TilesComeFromIdenticalWindowsInEveryView) {
  TrainConfig tc;
  tc.hr_patch = 4;
  const LightField scene = random_lf({2, 3, 9, 8, 1}, 1);
  const auto patches = make_patches(scene, tc);
  ASSERT_EQ(patches.size(), 4u);
  EXPECT_EQ(patches[1].hr, scene.crop(0, 4, 4, 4));
  EXPECT_EQ(patches[2].hr, scene.crop(4, 0, 4, 4));
  EXPECT_EQ(patches[3].lr, resize_views(scene.crop(4, 4, 4, 4), Rational{1, 2}));
}

TEST(Patches, ConstantSceneGivesConstantLr) {
  TrainConfig tc;
  tc.hr_patch = 16;
  const LightField scene(LfExtents{3, 3, 32, 48, 1}, 0.375f);
  for (const auto& p : make_patches(scene, tc))
    for (float x : p.lr.data()) EXPECT_NEAR(x, 0.375f, 1e-6f);
}

TEST(Patches, SceneTooSmallIsAnError) {
  TrainConfig tc;
  tc.hr_patch = 64;
  EXPECT_THROW(make_patches(LightField(LfExtents{5, 5, 63, 128, 1}), tc), DataError);
}

TEST(Patches, RandomCropsAreSeeded) {
  TrainConfig tc;
  tc.hr_patch = 8;
  const LightField scene = random_lf({2, 2, 20, 20, 1}, 2);
  Rng a(3), b(3);
  EXPECT_EQ(random_patches(scene, tc, 5, a), random_patches(scene, tc, 5, b));
}

TEST(Augment, FlipsAreInvolutions) {
  const LightField lf = random_lf({3, 4, 5, 6, 2}, 4);
  EXPECT_EQ(flip_horizontal(flip_horizontal(lf)), lf);
  EXPECT_EQ(flip_vertical(flip_vertical(lf)), lf);
  EXPECT_FALSE(flip_horizontal(lf) == lf);
}

TEST(Augment, RotationHasOrderFour) {
  const LightField lf = random_lf({3, 3, 5, 7, 1}, 5);
  LightField r = lf;
  for (int i = 0; i < 4; ++i) {
    r = rotate90(r);
    if (i < 3) EXPECT_FALSE(r == lf);
  }
  EXPECT_EQ(r, lf);
  EXPECT_THROW(rotate90(random_lf({2, 3, 4, 4, 1}, 6)), ShapeError);
}

TEST(Augment, TransformsMatchResynthesisedScenes) {
  const Image<float> tex = random_image(40, 40, 7);
  const LightField lf = synth_lf<float>(tex, 1.0, 5, 5, 20, 20);
  EXPECT_EQ(flip_horizontal(lf), synth_lf<float>(mirror_columns(tex), 1.0, 5, 5, 20, 20));
  EXPECT_EQ(flip_vertical(lf), synth_lf<float>(mirror_rows(tex), 1.0, 5, 5, 20, 20));
  EXPECT_EQ(rotate90(lf), synth_lf<float>(rotate_texture(tex), 1.0, 5, 5, 20, 20));
}

TEST(Augment, EveryCompositionIsAValidScene) {
  const Image<float> tex = random_image(36, 36, 8);
  const LightField lf = synth_lf<float>(tex, 1.0, 3, 3, 20, 20);
  for (int mask = 0; mask < 8; ++mask) {
    const AugmentDraw d{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    Image<float> t = tex;
    if (d.hflip) t = mirror_columns(t);
    if (d.vflip) t = mirror_rows(t);
    if (d.rot90) t = rotate_texture(t);
    EXPECT_EQ(apply_augment(lf, d), synth_lf<float>(t, 1.0, 3, 3, 20, 20)) << "mask " << mask;
  }
}

TEST(Augment, PairMembersTransformTogether) {
  TrainConfig tc;
  tc.hr_patch = 8;
  const auto pair = make_patches(random_lf({3, 3, 8, 8, 1}, 9), tc).front();
  const AugmentDraw d{true, false, true};
  const PatchPair out = augment(pair, d);
  EXPECT_EQ(out.lr, rotate90(flip_horizontal(pair.lr)));
  EXPECT_EQ(out.hr, rotate90(flip_horizontal(pair.hr)));
}

TEST(Augment, DisabledFlagsNeverFire) {
  TrainConfig tc;
  tc.augment_hflip = tc.augment_vflip = tc.augment_rot90 = false;
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const AugmentDraw d = draw_augment(rng, tc);
    EXPECT_FALSE(d.hflip || d.vflip || d.rot90);
  }
}

TEST(Adam, ZeroGradientKeepsParameters) {
  std::vector<Tensor<double>> p = {Tensor<double>({3}, {1, -2, 3})};
  const auto before = p;
  AdamState<double> st(p);
  adam_step(p, {Tensor<double>({3}, 0.0)}, st, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {0.3, -5.0, 1e-3}) {
    std::vector<Tensor<double>> p = {Tensor<double>({1}, {0.0})};
    AdamState<double> st(p);
    adam_step(p, {Tensor<double>({1}, {g})}, st, 0.01);
    EXPECT_NEAR(std::abs(p[0][0]), 0.01, 0.01 * 1e-8 / std::abs(g) + 1e-15);
    EXPECT_EQ(std::signbit(p[0][0]), g > 0);
  }
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  std::vector<Tensor<double>> p = {Tensor<double>({2}, {0.5, 0.25})};
  const auto before = p;
  AdamState<double> st(p);
  for (int i = 0; i < 3; ++i) adam_step(p, {Tensor<double>({2}, {1.0, -4.0})}, st, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Adam, TrajectoryOnQuadraticMatchesReference) {
  // f(x) = 0.5 * sum a_i x_i^2, gradient a_i x_i; reference written out with
  // scalar state per coordinate.
  const double a[2] = {1.5, -0.7};
  double rx[2] = {1.0, -2.0}, rm[2] = {0, 0}, rv[2] = {0, 0};
  std::vector<Tensor<double>> p = {Tensor<double>({2}, {1.0, -2.0})};
  AdamState<double> st(p);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 5; ++t) {
    adam_step(p, {Tensor<double>({2}, {a[0] * p[0][0], a[1] * p[0][1]})}, st, lr);
    for (int i = 0; i < 2; ++i) {
      const double g = a[i] * rx[i];
      rm[i] = b1 * rm[i] + (1 - b1) * g;
      rv[i] = b2 * rv[i] + (1 - b2) * g * g;
      const double mh = rm[i] / (1 - std::pow(b1, t));
      const double vh = rv[i] / (1 - std::pow(b2, t));
      rx[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    EXPECT_NEAR(p[0][0], rx[0], 1e-10);
    EXPECT_NEAR(p[0][1], rx[1], 1e-10);
  }
}

TEST(Adam, ShapeMismatchIsAnError) {
  std::vector<Tensor<double>> p = {Tensor<double>({2})};
  AdamState<double> st(p);
  EXPECT_THROW(adam_step(p, {Tensor<double>({3})}, st, 0.1), ShapeError);
  EXPECT_THROW(adam_step(p, {}, st, 0.1), ShapeError);
}

TEST(Schedule, HalvesEveryFifteenEpochs) {
  TrainConfig tc;
  EXPECT_DOUBLE_EQ(lr_at(0, tc), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(14, tc), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(15, tc), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(45, tc), 2.5e-5);
}

TEST(TrainLoop, IdenticalSeedsGiveIdenticalTraces) {
  const LightField scene = make_synthetic_scene({3, 3, 16, 16, 1.0, 4});
  EpitWeights<float> w(EpitConfig::micro());
  xavier_init(w, 1);
  const TrainConfig tc = tiny_train_config();
  const TrainResult a = train_loop({scene}, w, tc);
  const TrainResult b = train_loop({scene}, w, tc);
  ASSERT_EQ(a.trace.size(), 4u);  // 4 patches, batch 2, 2 epochs
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.weights.values(), b.weights.values());
  TrainConfig other = tc;
  other.seed = 6;
  EXPECT_FALSE(train_loop({scene}, w, other).trace == a.trace);
}

TEST(TrainLoop, EmptyDatasetIsAConfigError) {
  EXPECT_THROW(train_loop({}, EpitWeights<float>(EpitConfig::micro()), tiny_train_config()), ConfigError);
}

TEST(TrainLoop, NonFiniteLossAborts) {
  const LightField scene = make_synthetic_scene({2, 2, 8, 8, 0.0, 4});
  EpitWeights<float> w(EpitConfig::micro());
  xavier_init(w, 1);
  TrainConfig tc = tiny_train_config();
  tc.epochs = 5;
  tc.lr0 = 1e36;
  EXPECT_THROW(train_loop({scene}, w, tc), DivergenceError);
}

TEST(TrainLoop, WritesTraceAndCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "epit_train_outputs";
  std::filesystem::remove_all(dir);
  const LightField scene = make_synthetic_scene({2, 2, 16, 8, 1.0, 3});
  EpitWeights<float> w(EpitConfig::micro());
  xavier_init(w, 2);
  TrainConfig tc = tiny_train_config();
  tc.checkpoint_every = 1;
  tc.schedule_unit = ScheduleUnit::step;
  tc.lr_halve_every = 1;
  const TrainResult r = train_loop({scene}, w, tc, {dir / "trace.csv", dir / "model.eptw", "abc"});
  EXPECT_TRUE(std::filesystem::exists(dir / "model_e1.eptw"));
  EXPECT_TRUE(std::filesystem::exists(dir / "model_e2.eptw"));
  EXPECT_EQ(load_checkpoint<float>(dir / "model.eptw").values(), r.weights.values());
  std::ifstream in(dir / "trace.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# config_hash=abc");
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,step,lr,loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, r.trace.size());
  EXPECT_DOUBLE_EQ(r.trace[1].lr, 1e-4);  // per-step halving
  std::filesystem::remove_all(dir);
}

TEST(TrainLoop, MaxStepsStopsEarly) {
  const LightField scene = make_synthetic_scene({2, 2, 16, 16, 1.0, 3});
  EpitWeights<float> w(EpitConfig::micro());
  xavier_init(w, 2);
  TrainConfig tc = tiny_train_config();
  tc.epochs = 10;
  tc.max_steps = 3;
  EXPECT_EQ(train_loop({scene}, w, tc).trace.size(), 3u);
}
