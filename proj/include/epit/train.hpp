// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "epit/config.hpp"
#include "epit/error.hpp"
#include "epit/light_field.hpp"
#include "epit/model.hpp"
#include "epit/network.hpp"
#include "epit/ops.hpp"
#include "epit/rng.hpp"

namespace epit {

/// Aligned low- and high-resolution crops of one scene.
struct PatchPair {
  LightField lr;
  LightField hr;

  bool operator==(const PatchPair&) const = default;
};

inline PatchPair make_pair_from_hr(LightField hr, std::size_t alpha) {
  LightField lr = resize_views(hr, Rational{1, static_cast<long>(alpha)});
  return {std::move(lr), std::move(hr)};
}

inline void require_patch_fits(const LightField& scene, std::size_t patch) {
  const LfExtents& e = scene.extents();
  if (e.h < patch || e.w < patch) {
    throw DataError("scene " + e.str() + " is smaller than the " + std::to_string(patch) + "x" +
                    std::to_string(patch) + " training patch");
  }
}

/// Non-overlapping hr_patch x hr_patch tiles (stride = patch), each with its
/// bicubic 1/alpha LR counterpart.
inline std::vector<PatchPair> make_patches(const LightField& scene, const TrainConfig& cfg) {
  cfg.validate();
  require_patch_fits(scene, cfg.hr_patch);
  const std::size_t p = cfg.hr_patch;
  std::vector<PatchPair> out;
  for (std::size_t top = 0; top + p <= scene.extents().h; top += p)
    for (std::size_t left = 0; left + p <= scene.extents().w; left += p)
      out.push_back(make_pair_from_hr(scene.crop(top, left, p, p), cfg.alpha));
  return out;
}

/// `count` crops at uniformly drawn positions.
inline std::vector<PatchPair> random_patches(const LightField& scene, const TrainConfig& cfg, std::size_t count,
                                             Rng& rng) {
  cfg.validate();
  require_patch_fits(scene, cfg.hr_patch);
  const std::size_t p = cfg.hr_patch;
  std::vector<PatchPair> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t top = rng.below(scene.extents().h - p + 1);
    const std::size_t left = rng.below(scene.extents().w - p + 1);
    out.push_back(make_pair_from_hr(scene.crop(top, left, p, p), cfg.alpha));
  }
  return out;
}

/// Reverses w and the v view order.
template <typename T>
BasicLightField<T> flip_horizontal(const BasicLightField<T>& lf) {
  const LfExtents& e = lf.extents();
  BasicLightField<T> out(e);
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) out(u, v, h, w, c) = lf(u, e.v - 1 - v, h, e.w - 1 - w, c);
  return out;
}

/// Reverses h and the u view order.
template <typename T>
BasicLightField<T> flip_vertical(const BasicLightField<T>& lf) {
  const LfExtents& e = lf.extents();
  BasicLightField<T> out(e);
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) out(u, v, h, w, c) = lf(e.u - 1 - u, v, e.h - 1 - h, w, c);
  return out;
}

/// Rotates the spatial axes and the angular grid together:
/// out(u, v, h, w) = in(v, U-1-u, w, H'-1-h) with H' the output height.
template <typename T>
BasicLightField<T> rotate90(const BasicLightField<T>& lf) {
  const LfExtents& e = lf.extents();
  if (e.u != e.v) {
    throw ShapeError("rotate90: angular grid " + std::to_string(e.u) + "x" + std::to_string(e.v) +
                     " is not square");
  }
  BasicLightField<T> out({e.u, e.v, e.w, e.h, e.c});
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v)
      for (std::size_t h = 0; h < e.w; ++h)
        for (std::size_t w = 0; w < e.h; ++w)
          for (std::size_t c = 0; c < e.c; ++c) out(u, v, h, w, c) = lf(v, e.u - 1 - u, w, e.w - 1 - h, c);
  return out;
}

/// Coin flips for one augmentation; drawn whether or not a flag is enabled so
/// the generator advances identically under every configuration.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  bool rot90 = false;
};

inline AugmentDraw draw_augment(Rng& rng, const TrainConfig& cfg) {
  AugmentDraw d;
  d.hflip = rng.coin() && cfg.augment_hflip;
  d.vflip = rng.coin() && cfg.augment_vflip;
  d.rot90 = rng.coin() && cfg.augment_rot90;
  return d;
}

template <typename T>
BasicLightField<T> apply_augment(BasicLightField<T> lf, AugmentDraw d) {
  if (d.hflip) lf = flip_horizontal(lf);
  if (d.vflip) lf = flip_vertical(lf);
  if (d.rot90) lf = rotate90(lf);
  return lf;
}

/// Same transform on both members.
inline PatchPair augment(const PatchPair& pair, AugmentDraw d) {
  return {apply_augment(pair.lr, d), apply_augment(pair.hr, d)};
}

/// First and second moment estimates of Adam.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t t = 0;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor<T>>& params) {
    for (const auto& p : params) {
      m.emplace_back(p.shape(), T{0});
      v.emplace_back(p.shape(), T{0});
    }
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamHyper from(const TrainConfig& cfg) { return {cfg.beta1, cfg.beta2, cfg.adam_eps}; }
};

/// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr, AdamHyper hp = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                     " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: buffer " + std::to_string(i) + " has gradient " +
                       shape_str(grads[i].shape()) + " for parameter " + shape_str(params[i].shape()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = hp.beta1 * static_cast<double>(m[k]) + (1.0 - hp.beta1) * gk;
      const double vk = hp.beta2 * static_cast<double>(v[k]) + (1.0 - hp.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + hp.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
    }
  }
}

/// lr0 * 0.5^floor(unit / lr_halve_every), where unit is the epoch or the
/// step index according to cfg.schedule_unit.
inline double lr_at(std::size_t unit, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(0.5, static_cast<double>(unit / cfg.lr_halve_every));
}

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;

  bool operator==(const LossRecord&) const = default;
};

inline void write_loss_header(std::ostream& os, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n" << "epoch,step,lr,loss\n";
}

inline void write_loss_row(std::ostream& os, const LossRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g\n", r.epoch, r.step, r.lr, r.loss);
  os << buf;
}

struct TrainOutputs {
  /// Loss trace CSV; empty disables it.
  std::filesystem::path trace;
  /// Checkpoint written at the end (and every checkpoint_every epochs as
  /// <stem>_e<epoch><ext>); empty disables it.
  std::filesystem::path checkpoint;
  std::string config_hash;
};

struct TrainResult {
  EpitWeights<float> weights;
  std::vector<LossRecord> trace;
};

/// L1 loss and parameter gradients of one patch pair.
inline double sample_gradients(const EpitWeights<float>& w, const PatchPair& pair,
                               std::vector<Tensor<float>>& grads_accum, float weight) {
  Tape<float> tape(false);
  const Binding<float> p(tape, w, true);
  const LfExtents& e = pair.lr.extents();
  const LfDims dims{e.u, e.v, e.h, e.w};
  const Var pred = epit_graph(tape, p, tape.constant(lf_to_tensor<float>(pair.lr)), dims);
  const Var loss = ops::l1_loss(tape, pred, tape.constant(lf_to_tensor<float>(pair.hr)));
  const double value = tape.value(loss)[0];
  if (!std::isfinite(value)) return value;
  tape.backward(loss);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Tensor<float> g = tape.gradient(p.vars()[i]);
    float* dst = grads_accum[i].data();
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += weight * g[k];
  }
  return value;
}

inline std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& base, std::size_t epoch) {
  std::filesystem::path p = base;
  p.replace_filename(base.stem().string() + "_e" + std::to_string(epoch) + base.extension().string());
  return p;
}

/// Mini-batch Adam on the L1 loss. Fully determined by (weights, scenes, cfg):
/// patch order, augmentation and crops all come from streams derived from
/// cfg.seed.
inline TrainResult train_loop(const std::vector<LightField>& scenes, EpitWeights<float> weights,
                              const TrainConfig& cfg, const TrainOutputs& outputs = {}) {
  cfg.validate();
  if (scenes.empty()) throw ConfigError("train: the dataset contains no scenes");
  const EpitConfig& mc = weights.config();
  mc.validate();
  if (mc.mode != Mode::spatial_sr) throw ConfigError("train: only mode=spatial_sr is trainable");
  if (mc.alpha != cfg.alpha) {
    throw ConfigError("train: model alpha " + std::to_string(mc.alpha) + " differs from training alpha " +
                      std::to_string(cfg.alpha));
  }
  for (const auto& s : scenes) {
    if (s.extents().c != mc.in_channels) {
      throw DataError("train: scene has " + std::to_string(s.extents().c) + " channels, model expects " +
                      std::to_string(mc.in_channels));
    }
  }

  std::vector<PatchPair> grid;
  if (!cfg.random_crop) {
    for (const auto& s : scenes) {
      auto patches = make_patches(s, cfg);
      for (auto& p : patches) grid.push_back(std::move(p));
    }
  }

  std::optional<std::ofstream> trace_file;
  if (!outputs.trace.empty()) {
    if (outputs.trace.has_parent_path()) std::filesystem::create_directories(outputs.trace.parent_path());
    trace_file.emplace(outputs.trace);
    if (!*trace_file) throw DataError(outputs.trace.string() + ": cannot create");
    write_loss_header(*trace_file, outputs.config_hash);
  }

  TrainResult result{std::move(weights), {}};
  EpitWeights<float>& w = result.weights;
  AdamState<float> adam(w.values());
  const AdamHyper hyper = AdamHyper::from(cfg);
  std::size_t step = 0;
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    std::vector<PatchPair> crops;
    if (cfg.random_crop) {
      for (const auto& s : scenes) {
        auto patches = random_patches(s, cfg, cfg.crops_per_scene, rng);
        for (auto& p : patches) crops.push_back(std::move(p));
      }
    }
    const std::vector<PatchPair>& pool = cfg.random_crop ? crops : grid;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(end - start);
      std::vector<Tensor<float>> grads;
      for (const auto& v : w.values()) grads.emplace_back(v.shape(), 0.0f);
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const PatchPair sample = augment(pool[order[i]], draw_augment(rng, cfg));
        loss += sample_gradients(w, sample, grads, inv);
      }
      loss /= static_cast<double>(end - start);
      const double lr = lr_at(cfg.schedule_unit == ScheduleUnit::epoch ? epoch : step, cfg);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (lr " + std::to_string(lr) + ")");
      }
      adam_step(w.values(), grads, adam, lr, hyper);
      const LossRecord rec{epoch, step, lr, loss};
      result.trace.push_back(rec);
      if (trace_file) write_loss_row(*trace_file, rec);
      ++step;
      if (cfg.max_steps != 0 && step >= cfg.max_steps) done = true;
    }
    if (!outputs.checkpoint.empty() && cfg.checkpoint_every != 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(w, periodic_checkpoint_path(outputs.checkpoint, epoch + 1));
    }
  }
  if (!outputs.checkpoint.empty()) save_checkpoint(w, outputs.checkpoint);
  return result;
}

}  // namespace epit
