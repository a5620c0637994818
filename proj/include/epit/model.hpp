// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "epit/binary_io.hpp"
#include "epit/config.hpp"
#include "epit/error.hpp"
#include "epit/rng.hpp"
#include "epit/tensor.hpp"

namespace epit {

/// Angular extent produced by the angular-SR head (2x2 -> 7x7).
inline constexpr std::size_t kAsrOutViews = 7;

enum class ParamKind { conv_weight, linear_weight, bias, norm_gain, norm_shift };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;

  std::size_t fan_in() const {
    if (kind == ParamKind::conv_weight) return shape[1] * shape[2] * shape[3];
    if (kind == ParamKind::linear_weight) return shape[0];
    return 0;
  }
  std::size_t fan_out() const {
    if (kind == ParamKind::conv_weight) return shape[0] * shape[2] * shape[3];
    if (kind == ParamKind::linear_weight) return shape[1];
    return 0;
  }
};

namespace layout_detail {

inline void conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t cout,
                 std::size_t cin, std::size_t k) {
  out.push_back({prefix + ".weight", {cout, cin, k, k}, ParamKind::conv_weight});
  out.push_back({prefix + ".bias", {cout}, ParamKind::bias});
}

inline void spatial_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t cin,
                         std::size_t c) {
  conv(out, prefix + ".conv0", c, cin, 3);
  conv(out, prefix + ".conv1", c, c, 3);
  conv(out, prefix + ".conv2", c, c, 3);
}

inline void transformer(std::vector<ParamSpec>& out, const std::string& p, std::size_t c,
                        std::size_t d, std::size_t ratio) {
  out.push_back({p + ".w_in", {c, d}, ParamKind::linear_weight});
  out.push_back({p + ".ln1.gamma", {d}, ParamKind::norm_gain});
  out.push_back({p + ".ln1.beta", {d}, ParamKind::norm_shift});
  out.push_back({p + ".w_q", {d, d}, ParamKind::linear_weight});
  out.push_back({p + ".w_k", {d, d}, ParamKind::linear_weight});
  out.push_back({p + ".w_v", {d, d}, ParamKind::linear_weight});
  out.push_back({p + ".ln2.gamma", {d}, ParamKind::norm_gain});
  out.push_back({p + ".ln2.beta", {d}, ParamKind::norm_shift});
  out.push_back({p + ".mlp.fc1.weight", {d, ratio * d}, ParamKind::linear_weight});
  out.push_back({p + ".mlp.fc1.bias", {ratio * d}, ParamKind::bias});
  out.push_back({p + ".mlp.fc2.weight", {ratio * d, d}, ParamKind::linear_weight});
  out.push_back({p + ".mlp.fc2.bias", {d}, ParamKind::bias});
  out.push_back({p + ".w_out", {d, c}, ParamKind::linear_weight});
}

inline void epi_conv(std::vector<ParamSpec>& out, const std::string& p, std::size_t c) {
  conv(out, p + ".conv0", c, c, 3);
  conv(out, p + ".conv1", c, c, 3);
}

}  // namespace layout_detail

/// Name prefix of the EPI unit used by `block` for one orientation.
inline std::string unit_prefix(const EpitConfig& cfg, std::size_t block, bool horizontal) {
  const std::string base = "block" + std::to_string(block) + (cfg.use_transformer ? ".trans" : ".epiconv");
  if (cfg.share_weights) return base;
  return base + (horizontal ? "_h" : "_v");
}

/// Every learnable buffer implied by a configuration, in a fixed order.
inline std::vector<ParamSpec> parameter_layout(const EpitConfig& cfg) {
  cfg.validate(true);
  using namespace layout_detail;
  const std::size_t c = cfg.channels;
  std::vector<ParamSpec> out;
  spatial_conv(out, "stem", cfg.in_channels, c);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    std::vector<std::string> units;
    if (cfg.share_weights) {
      units.push_back(unit_prefix(cfg, b, true));
    } else {
      if (cfg.use_horizontal) units.push_back(unit_prefix(cfg, b, true));
      if (cfg.use_vertical) units.push_back(unit_prefix(cfg, b, false));
    }
    for (const auto& u : units) {
      if (cfg.use_transformer) transformer(out, u, c, cfg.embed_dim, cfg.mlp_ratio);
      else epi_conv(out, u, c);
    }
    if (cfg.use_spatial_conv) spatial_conv(out, "block" + std::to_string(b) + ".local", c, c);
  }
  if (cfg.mode == Mode::spatial_sr) {
    conv(out, "head.up", c * cfg.alpha * cfg.alpha, c, 1);
    conv(out, "head.out", cfg.out_channels, c, 3);
  } else {
    conv(out, "head.ang", c, c, 2);
    conv(out, "head.expand", c * kAsrOutViews * kAsrOutViews, c, 1);
    conv(out, "head.out", cfg.out_channels, c, 3);
  }
  return out;
}

/// Number of scalar parameters of a configuration.
inline std::size_t param_count(const EpitConfig& cfg) {
  std::size_t n = 0;
  for (const auto& p : parameter_layout(cfg)) n += shape_size(p.shape);
  return n;
}

/// Closed-form sizes of the architectural components.
struct ComponentSizes {
  static std::size_t conv(std::size_t cout, std::size_t cin, std::size_t k) {
    return cout * cin * k * k + cout;
  }
  static std::size_t spatial_conv(std::size_t cin, std::size_t c) {
    return conv(c, cin, 3) + 2 * conv(c, c, 3);
  }
  static std::size_t transformer(std::size_t c, std::size_t d, std::size_t ratio) {
    return 2 * c * d + 3 * d * d + 4 * d + 2 * ratio * d * d + ratio * d + d;
  }
  static std::size_t epi_conv(std::size_t c) { return 2 * conv(c, c, 3); }
};

/// Complete learnable parameter set of an EPIT model.
template <typename T>
class EpitWeights {
 public:
  explicit EpitWeights(EpitConfig cfg) : config_(cfg), layout_(parameter_layout(cfg)) {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const ParamSpec& p = layout_[i];
      const T fill = p.kind == ParamKind::norm_gain ? T{1} : T{0};
      values_.emplace_back(p.shape, fill);
      index_.emplace(p.name, i);
    }
  }

  const EpitConfig& config() const { return config_; }
  const std::vector<ParamSpec>& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  std::vector<Tensor<T>>& values() { return values_; }
  const std::vector<Tensor<T>>& values() const { return values_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name) { return values_[index_of(name)]; }
  const Tensor<T>& at(const std::string& name) const { return values_[index_of(name)]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename U>
  EpitWeights<U> cast() const {
    EpitWeights<U> out(config_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.value(i) = values_[i].template cast<U>();
    return out;
  }

 private:
  EpitConfig config_;
  std::vector<ParamSpec> layout_;
  std::vector<Tensor<T>> values_;
  std::map<std::string, std::size_t> index_;
};

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)); zero biases,
/// unit layer-norm gains. Deterministic in `seed`.
template <typename T>
void xavier_init(EpitWeights<T>& weights, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const ParamSpec& p = weights.layout()[i];
    Tensor<T>& v = weights.value(i);
    switch (p.kind) {
      case ParamKind::conv_weight:
      case ParamKind::linear_weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in() + p.fan_out()));
        for (T& x : v.values()) x = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::norm_gain:
        for (T& x : v.values()) x = T{1};
        break;
      case ParamKind::bias:
      case ParamKind::norm_shift:
        for (T& x : v.values()) x = T{0};
        break;
    }
  }
}

// Checkpoint layout: "EPTW", u16 version, u32 length + model config text,
// u32 buffer count, then per buffer: u32 name length, name, u32 rank,
// u32 extents, f32 payload. Little-endian throughout.
inline constexpr char kCheckpointMagic[4] = {'E', 'P', 'T', 'W'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::string serialize_model_config(const EpitConfig& cfg) {
  Settings s;
  s.model = cfg;
  s.train.alpha = cfg.alpha;
  std::string out;
  for (const auto& f : config_fields()) {
    if (f.model_key) out += f.key + "=" + f.get(s) + "\n";
  }
  return out;
}

template <typename T>
void write_checkpoint(std::ostream& os, const EpitWeights<T>& w) {
  os.write(kCheckpointMagic, 4);
  io::put_u16(os, kCheckpointVersion);
  const std::string cfg = serialize_model_config(w.config());
  io::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  io::put_bytes(os, cfg);
  io::put_u32(os, static_cast<std::uint32_t>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::string& name = w.layout()[i].name;
    io::put_u32(os, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(os, name);
    const Tensor<T>& v = w.value(i);
    io::put_u32(os, static_cast<std::uint32_t>(v.rank()));
    for (std::size_t d : v.shape()) io::put_u32(os, static_cast<std::uint32_t>(d));
    for (T x : v.values()) io::put_f32(os, static_cast<float>(x));
  }
}

template <typename T = float>
EpitWeights<T> read_checkpoint(std::istream& is, const std::string& source) {
  io::Reader in(is, source);
  if (in.bytes(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw DataError(source + ": bad magic, expected EPTW");
  }
  const std::uint16_t version = in.u16("version");
  if (version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = in.u32("config length");
  const std::string cfg_text = in.bytes(cfg_len, "config");
  Settings settings;
  try {
    settings = parse_settings(cfg_text, source);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  EpitWeights<T> w(settings.model);
  const std::uint32_t count = in.u32("buffer count");
  if (count != w.size()) {
    throw DataError(source + ": " + std::to_string(count) + " buffers, configuration implies " +
                    std::to_string(w.size()));
  }
  std::vector<bool> seen(w.size(), false);
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::string name = in.bytes(in.u32("name length"), "name");
    if (!w.contains(name)) throw DataError(source + ": unexpected buffer '" + name + "'");
    const std::size_t idx = w.index_of(name);
    const std::uint32_t rank = in.u32("rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.u32("extent");
    if (shape != w.value(idx).shape()) {
      throw DataError(source + ": buffer '" + name + "' has extents " + shape_str(shape) +
                      ", configuration requires " + shape_str(w.value(idx).shape()));
    }
    if (seen[idx]) throw DataError(source + ": duplicate buffer '" + name + "'");
    seen[idx] = true;
    for (T& x : w.value(idx).values()) x = static_cast<T>(in.f32("payload"));
  }
  return w;
}

template <typename T>
void save_checkpoint(const EpitWeights<T>& w, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot create");
  write_checkpoint(os, w);
  if (!os) throw DataError(path.string() + ": write failed");
}

template <typename T = float>
EpitWeights<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  return read_checkpoint<T>(is, path.string());
}

}  // namespace epit
