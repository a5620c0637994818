// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "epit/error.hpp"
#include "epit/lf_io.hpp"
#include "epit/light_field.hpp"
#include "epit/metrics.hpp"
#include "epit/model.hpp"
#include "epit/network.hpp"
#include "epit/png.hpp"

namespace epit {

/// Anything that maps a low-resolution light field to a super-resolved one.
class SrModel {
 public:
  virtual ~SrModel() = default;
  virtual LightField super_resolve(const LightField& lr) const = 0;
  virtual std::size_t alpha() const = 0;
  /// Channels the model consumes (1: luma).
  virtual std::size_t channels() const = 0;
  virtual std::string id() const = 0;
};

class EpitModel final : public SrModel {
 public:
  explicit EpitModel(EpitWeights<float> weights, std::string id = "epit")
      : weights_(std::move(weights)), id_(std::move(id)) {
    if (weights_.config().mode != Mode::spatial_sr) {
      throw ConfigError("evaluation needs a spatial_sr model, got mode=angular_sr");
    }
  }
  LightField super_resolve(const LightField& lr) const override { return epit_forward(lr, weights_); }
  std::size_t alpha() const override { return weights_.config().alpha; }
  std::size_t channels() const override { return weights_.config().in_channels; }
  std::string id() const override { return id_; }
  const EpitWeights<float>& weights() const { return weights_; }

 private:
  EpitWeights<float> weights_;
  std::string id_;
};

/// Per-view bicubic upscaling: the Bicubic baseline.
class BicubicModel final : public SrModel {
 public:
  explicit BicubicModel(std::size_t alpha) : alpha_(alpha) {}
  LightField super_resolve(const LightField& lr) const override {
    return resize_views(lr, Rational{static_cast<long>(alpha_), 1});
  }
  std::size_t alpha() const override { return alpha_; }
  std::size_t channels() const override { return 1; }
  std::string id() const override { return "bicubic"; }

 private:
  std::size_t alpha_;
};

struct ViewMetric {
  double psnr = 0.0;
  double ssim = 0.0;
};

struct SceneReport {
  std::string name;
  std::size_t u_views = 0;
  std::size_t v_views = 0;
  std::vector<ViewMetric> per_view;  // row-major over (u, v)

  const ViewMetric& at(std::size_t u, std::size_t v) const { return per_view[u * v_views + v]; }
  double psnr() const {
    double s = 0.0;
    for (const auto& m : per_view) s += m.psnr;
    return s / static_cast<double>(per_view.size());
  }
  double ssim() const {
    double s = 0.0;
    for (const auto& m : per_view) s += m.ssim;
    return s / static_cast<double>(per_view.size());
  }
};

/// Scores over SAIs averaged per scene, scene scores averaged per dataset.
struct MetricReport {
  std::vector<SceneReport> scenes;
  std::size_t alpha = 0;
  int shear = 0;
  std::string model_id;

  double psnr() const {
    double s = 0.0;
    for (const auto& r : scenes) s += r.psnr();
    return scenes.empty() ? 0.0 : s / static_cast<double>(scenes.size());
  }
  double ssim() const {
    double s = 0.0;
    for (const auto& r : scenes) s += r.ssim();
    return scenes.empty() ? 0.0 : s / static_cast<double>(scenes.size());
  }
};

struct NamedScene {
  std::string name;
  LightField lf;
};

struct EvalOptions {
  std::size_t shave = 0;
  std::size_t threads = 1;
};

/// Luma of an RGB field, or the field itself when it has one channel.
inline LightField to_luma(const LightField& lf) {
  if (lf.extents().c == 1) return lf;
  return rgb_to_y(lf);
}

inline Image<float> shave_image(const Image<float>& img, std::size_t n) {
  if (n == 0) return img;
  if (2 * n >= img.height() || 2 * n >= img.width()) {
    throw ConfigError("shave " + std::to_string(n) + " removes the whole " + std::to_string(img.height()) + "x" +
                      std::to_string(img.width()) + " view");
  }
  return img.crop(n, n, img.height() - 2 * n, img.width() - 2 * n);
}

/// Per-view PSNR / SSIM of two equally sized light fields, on luma.
inline SceneReport compare_views(const LightField& sr, const LightField& hr, const std::string& name,
                                 std::size_t shave = 0) {
  if (!(sr.extents() == hr.extents())) {
    throw ShapeError("compare: output " + sr.extents().str() + " differs from reference " + hr.extents().str());
  }
  const LightField a = to_luma(sr);
  const LightField b = to_luma(hr);
  SceneReport rep{name, a.extents().u, a.extents().v, {}};
  for (std::size_t u = 0; u < rep.u_views; ++u)
    for (std::size_t v = 0; v < rep.v_views; ++v) {
      const Image<float> x = shave_image(a.view(u, v), shave);
      const Image<float> y = shave_image(b.view(u, v), shave);
      rep.per_view.push_back({psnr(x, y), ssim(x, y)});
    }
  return rep;
}

/// Crops the HR scene to a multiple of alpha, derives the bicubic LR input,
/// runs the model and scores every view.
inline SceneReport evaluate_scene(const SrModel& model, const LightField& scene, const std::string& name,
                                  const EvalOptions& opt = {}) {
  const std::size_t alpha = model.alpha();
  LightField hr = crop_to_multiple(scene, alpha);
  if (model.channels() == 1) hr = to_luma(hr);
  else if (hr.extents().c != model.channels()) {
    throw DataError(name + ": scene has " + std::to_string(hr.extents().c) + " channels, model expects " +
                    std::to_string(model.channels()));
  }
  const LightField lr = resize_views(hr, Rational{1, static_cast<long>(alpha)});
  return compare_views(model.super_resolve(lr), hr, name, opt.shave);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
/// (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Evaluates every scene; reports keep the input scene order.
inline MetricReport evaluate_dataset(const SrModel& model, const std::vector<NamedScene>& scenes,
                                     const EvalOptions& opt = {}) {
  MetricReport rep;
  rep.alpha = model.alpha();
  rep.model_id = model.id();
  rep.scenes.resize(scenes.size());
  parallel_for(scenes.size(), opt.threads, [&](std::size_t i) {
    rep.scenes[i] = evaluate_scene(model, scenes[i].lf, scenes[i].name, opt);
  });
  return rep;
}

inline std::string csv_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline void write_provenance(std::ostream& os, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
}

/// `scene,u,v,psnr,ssim`, one row per view; infinite PSNR is written as 100.
inline void write_metrics_csv(std::ostream& os, const MetricReport& rep, const std::string& config_hash) {
  write_provenance(os, config_hash);
  os << "scene,u,v,psnr,ssim\n";
  for (const auto& s : rep.scenes)
    for (std::size_t u = 0; u < s.u_views; ++u)
      for (std::size_t v = 0; v < s.v_views; ++v) {
        const ViewMetric& m = s.at(u, v);
        os << s.name << "," << u << "," << v << "," << csv_number(psnr_for_csv(m.psnr)) << ","
           << csv_number(m.ssim) << "\n";
      }
}

struct SweepRow {
  int shear = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Common spatial margin removed from every scene so all rows of a sweep see
/// the same content extent.
inline std::size_t sweep_margin(const std::vector<int>& shears, std::size_t views) {
  std::size_t m = 0;
  for (int s : shears) m = std::max(m, shear_margin(s, views));
  return m;
}

/// Shears each HR scene by s, crops all rows to the region valid for the
/// largest |s|, then evaluates (LR derived after cropping).
inline std::vector<SweepRow> shear_sweep(const SrModel& model, const std::vector<NamedScene>& scenes,
                                         const std::vector<int>& shears, const EvalOptions& opt = {}) {
  std::vector<SweepRow> rows;
  for (int s : shears) {
    std::vector<NamedScene> sheared;
    for (const auto& sc : scenes) {
      const LfExtents& e = sc.lf.extents();
      const std::size_t mh = sweep_margin(shears, e.u);
      const std::size_t mw = sweep_margin(shears, e.v);
      if (2 * mh >= e.h || 2 * mw >= e.w) {
        throw ShapeError(sc.name + ": shear range leaves an empty valid region for " + e.str());
      }
      const LightField moved = shear(sc.lf, ShearSpec{s});
      const std::size_t th = mh - shear_margin(s, e.u);
      const std::size_t tw = mw - shear_margin(s, e.v);
      sheared.push_back({sc.name, moved.crop(th, tw, e.h - 2 * mh, e.w - 2 * mw)});
    }
    const MetricReport rep = evaluate_dataset(model, sheared, opt);
    rows.push_back({s, rep.psnr(), rep.ssim()});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, const std::string& config_hash) {
  write_provenance(os, config_hash);
  os << "shear,psnr,ssim\n";
  for (const auto& r : rows) os << r.shear << "," << csv_number(psnr_for_csv(r.psnr)) << "," << csv_number(r.ssim) << "\n";
}

/// Per-view PSNR laid out by angular coordinate.
struct PerspectiveGrid {
  std::size_t u_views = 0;
  std::size_t v_views = 0;
  std::vector<double> psnr;  // row-major over (u, v)

  double at(std::size_t u, std::size_t v) const { return psnr[u * v_views + v]; }
};

inline PerspectiveGrid perspective_grid(const SrModel& model, const LightField& scene, const EvalOptions& opt = {}) {
  const SceneReport rep = evaluate_scene(model, scene, "scene", opt);
  PerspectiveGrid g{rep.u_views, rep.v_views, {}};
  for (const auto& m : rep.per_view) g.psnr.push_back(m.psnr);
  return g;
}

inline void write_grid_csv(std::ostream& os, const PerspectiveGrid& g, const std::string& config_hash) {
  write_provenance(os, config_hash);
  os << "u,v,psnr\n";
  for (std::size_t u = 0; u < g.u_views; ++u)
    for (std::size_t v = 0; v < g.v_views; ++v) os << u << "," << v << "," << csv_number(psnr_for_csv(g.at(u, v))) << "\n";
}

/// Attention matrix of one Basic-Transformer invocation, with its tokens
/// grouped by angular index: token t = a * len + s for angular a, spatial s.
struct AttentionDump {
  std::size_t block = 0;
  Orientation orientation = Orientation::horizontal;
  std::size_t group = 0;
  std::size_t angular = 0;  // views along the token axis
  std::size_t len = 0;      // tokens per view
  Tensor<float> matrix;     // [L, L]

  std::size_t tokens() const { return angular * len; }

  /// Slice between query view aq and key view ak.
  float slice(std::size_t aq, std::size_t ak, std::size_t i, std::size_t j) const {
    return matrix[(aq * len + i) * tokens() + ak * len + j];
  }

  /// Slices as a light field (Aq, Ak, len, len, 1).
  LightField slices() const {
    LightField out({angular, angular, len, len, 1});
    for (std::size_t aq = 0; aq < angular; ++aq)
      for (std::size_t ak = 0; ak < angular; ++ak)
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < len; ++j) out(aq, ak, i, j) = slice(aq, ak, i, j);
    return out;
  }
};

/// Runs the model on `input` and captures the attention matrix of the given
/// block, orientation and query group.
inline AttentionDump attn_dump(const EpitWeights<float>& weights, const LightField& input, std::size_t block,
                               Orientation orientation, std::size_t group) {
  const EpitConfig& cfg = weights.config();
  if (!cfg.use_transformer) throw ConfigError("attn-dump: the model has no transformer units");
  if (block >= cfg.num_blocks) {
    throw ConfigError("attn-dump: block " + std::to_string(block) + " out of range (model has " +
                      std::to_string(cfg.num_blocks) + " blocks)");
  }
  const bool enabled = orientation == Orientation::horizontal ? cfg.use_horizontal : cfg.use_vertical;
  if (!enabled) throw ConfigError(std::string("attn-dump: the ") + to_string(orientation) + " stage is disabled");
  const LfExtents& e = input.extents();
  const std::size_t groups = orientation == Orientation::horizontal ? e.u * e.h : e.v * e.w;
  if (group >= groups) {
    throw ConfigError("attn-dump: group " + std::to_string(group) + " out of range (" + std::to_string(groups) +
                      " groups)");
  }
  AttentionProbe<float> probe;
  probe.block = block;
  probe.orientation = orientation;
  probe.group = group;
  epit_forward(input, weights, &probe);
  AttentionDump d;
  d.block = block;
  d.orientation = orientation;
  d.group = group;
  d.angular = orientation == Orientation::horizontal ? e.v : e.u;
  d.len = orientation == Orientation::horizontal ? e.w : e.h;
  d.matrix = std::move(*probe.matrix);
  return d;
}

/// Grayscale heatmap of the matrix, scaled so its maximum maps to white.
inline void write_attention_png(const AttentionDump& d, const std::filesystem::path& path) {
  const std::size_t n = d.tokens();
  float peak = 0.0f;
  for (float x : d.matrix.values()) peak = std::max(peak, x);
  png::Raster r{n, n, 1, std::vector<std::uint8_t>(n * n)};
  for (std::size_t i = 0; i < n * n; ++i) {
    const float x = peak > 0.0f ? d.matrix[i] / peak : 0.0f;
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f));
  }
  png::write(path.string(), r);
}

}  // namespace epit
