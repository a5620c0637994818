// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "epit/error.hpp"

namespace epit {

enum class Mode { spatial_sr, angular_sr };

/// Architecture hyper-parameters and ablation switches.
struct EpitConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t channels = 32;   // C
  std::size_t embed_dim = 32;  // D
  std::size_t num_blocks = 5;
  std::size_t mlp_ratio = 2;
  std::size_t alpha = 2;
  double leaky_slope = 0.1;
  double ln_eps = 1e-5;
  bool use_horizontal = true;
  bool use_vertical = true;
  bool share_weights = true;
  bool use_spatial_conv = true;
  bool use_transformer = true;
  bool horizontal_first = true;
  bool stage_residual = true;
  Mode mode = Mode::spatial_sr;

  /// Zero blocks is accepted only for parameter accounting (stem + head).
  void validate(bool allow_zero_blocks = false) const {
    if (num_blocks < 1 && !allow_zero_blocks) throw ConfigError("num_blocks must be >= 1");
    if (in_channels < 1 || out_channels < 1) throw ConfigError("in_channels/out_channels must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (!use_horizontal && !use_vertical) {
      throw ConfigError("use_horizontal and use_vertical cannot both be false");
    }
    if (mode == Mode::spatial_sr && alpha != 2 && alpha != 4) {
      throw ConfigError("alpha must be 2 or 4, got " + std::to_string(alpha));
    }
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0, 1)");
    if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  }

  /// C = D = 8, one block.
  static EpitConfig micro() {
    EpitConfig c;
    c.channels = 8;
    c.embed_dim = 8;
    c.num_blocks = 1;
    return c;
  }

  /// C = D = 64, five blocks.
  static EpitConfig large() {
    EpitConfig c;
    c.channels = 64;
    c.embed_dim = 64;
    return c;
  }
};

enum class ScheduleUnit { epoch, step };

/// Optimisation and data-pipeline settings.
struct TrainConfig {
  std::size_t alpha = 2;
  std::size_t hr_patch = 64;
  std::size_t batch_size = 4;
  std::size_t epochs = 80;
  double lr0 = 2e-4;
  std::size_t lr_halve_every = 15;
  ScheduleUnit schedule_unit = ScheduleUnit::epoch;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t seed = 0;
  bool augment_hflip = true;
  bool augment_vflip = true;
  bool augment_rot90 = true;
  bool random_crop = false;
  std::size_t crops_per_scene = 4;
  std::size_t checkpoint_every = 0;
  std::size_t max_steps = 0;

  void validate() const {
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (hr_patch == 0 || hr_patch % alpha != 0) {
      throw ConfigError("hr_patch " + std::to_string(hr_patch) + " must be a positive multiple of alpha " +
                        std::to_string(alpha));
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_halve_every < 1) throw ConfigError("lr_halve_every must be >= 1");
    if (!(lr0 >= 0.0)) throw ConfigError("lr0 must be non-negative");
  }
};

/// Everything a flat key=value config file can address.
struct Settings {
  EpitConfig model;
  TrainConfig train;
};

namespace config_detail {

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

/// One addressable configuration key.
struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
  bool model_key = false;  // part of the architecture (stored in checkpoints)
};

namespace config_detail {

inline void parse_into(const std::string& key, const std::string& v, std::size_t& out) {
  out = parse_size(key, v);
}
inline void parse_into(const std::string& key, const std::string& v, double& out) {
  out = parse_double(key, v);
}
inline void parse_into(const std::string& key, const std::string& v, bool& out) {
  out = parse_bool(key, v);
}
inline std::string format(std::size_t x) { return std::to_string(x); }
inline std::string format(double x) { return format_double(x); }
inline std::string format(bool x) { return x ? "true" : "false"; }

template <typename Group, typename V>
ConfigField member_field(std::string key, std::string help, Group Settings::*group, V Group::*member) {
  return ConfigField{key, std::move(help),
                     [key, group, member](Settings& s, const std::string& v) {
                       parse_into(key, v, s.*group.*member);
                     },
                     [group, member](const Settings& s) { return format(s.*group.*member); },
                     std::is_same_v<Group, EpitConfig>};
}

}  // namespace config_detail

/// Table of every key, in canonical serialisation order.
inline const std::vector<ConfigField>& config_fields() {
  using config_detail::member_field;
  using config_detail::parse_size;
  constexpr auto model = &Settings::model;
  constexpr auto train = &Settings::train;
  static const std::vector<ConfigField> fields = {
      member_field("in_channels", "input channels (1 luma, 3 RGB)", model, &EpitConfig::in_channels),
      member_field("out_channels", "output channels", model, &EpitConfig::out_channels),
      member_field("channels", "feature channels C", model, &EpitConfig::channels),
      member_field("embed_dim", "token embedding width D", model, &EpitConfig::embed_dim),
      member_field("num_blocks", "non-local cascading blocks", model, &EpitConfig::num_blocks),
      member_field("mlp_ratio", "MLP hidden width as a multiple of D", model, &EpitConfig::mlp_ratio),
      ConfigField{"alpha", "spatial upscaling factor (2 or 4)",
                  [](Settings& s, const std::string& v) {
                    s.model.alpha = s.train.alpha = parse_size("alpha", v);
                  },
                  [](const Settings& s) { return std::to_string(s.model.alpha); }, true},
      member_field("leaky_slope", "LeakyReLU negative slope", model, &EpitConfig::leaky_slope),
      member_field("ln_eps", "layer-norm epsilon", model, &EpitConfig::ln_eps),
      member_field("use_horizontal", "enable the horizontal EPI stage", model, &EpitConfig::use_horizontal),
      member_field("use_vertical", "enable the vertical EPI stage", model, &EpitConfig::use_vertical),
      member_field("share_weights", "share transformer weights between orientations", model, &EpitConfig::share_weights),
      member_field("use_spatial_conv", "SpatialConv after each EPI stage", model, &EpitConfig::use_spatial_conv),
      member_field("use_transformer", "transformer units (false: cascaded EPI convolutions)", model, &EpitConfig::use_transformer),
      member_field("horizontal_first", "run the horizontal stage before the vertical one", model, &EpitConfig::horizontal_first),
      member_field("stage_residual", "skip connection around each EPI stage", model, &EpitConfig::stage_residual),
      ConfigField{"mode", "spatial_sr or angular_sr",
                  [](Settings& s, const std::string& v) {
                    if (v == "spatial_sr") s.model.mode = Mode::spatial_sr;
                    else if (v == "angular_sr") s.model.mode = Mode::angular_sr;
                    else throw ConfigError("config key 'mode': expected spatial_sr or angular_sr, got '" + v + "'");
                  },
                  [](const Settings& s) {
                    return std::string(s.model.mode == Mode::spatial_sr ? "spatial_sr" : "angular_sr");
                  },
                  true},
      member_field("hr_patch", "HR training patch size", train, &TrainConfig::hr_patch),
      member_field("batch_size", "patches per optimisation step", train, &TrainConfig::batch_size),
      member_field("epochs", "training epochs", train, &TrainConfig::epochs),
      member_field("lr0", "initial learning rate", train, &TrainConfig::lr0),
      member_field("lr_halve_every", "halve the learning rate every N schedule units", train, &TrainConfig::lr_halve_every),
      ConfigField{"schedule_unit", "epoch or step",
                  [](Settings& s, const std::string& v) {
                    if (v == "epoch") s.train.schedule_unit = ScheduleUnit::epoch;
                    else if (v == "step") s.train.schedule_unit = ScheduleUnit::step;
                    else throw ConfigError("config key 'schedule_unit': expected epoch or step, got '" + v + "'");
                  },
                  [](const Settings& s) {
                    return std::string(s.train.schedule_unit == ScheduleUnit::epoch ? "epoch" : "step");
                  }},
      member_field("beta1", "Adam beta1", train, &TrainConfig::beta1),
      member_field("beta2", "Adam beta2", train, &TrainConfig::beta2),
      member_field("adam_eps", "Adam epsilon", train, &TrainConfig::adam_eps),
      member_field("seed", "random seed", train, &TrainConfig::seed),
      member_field("augment_hflip", "random horizontal flips", train, &TrainConfig::augment_hflip),
      member_field("augment_vflip", "random vertical flips", train, &TrainConfig::augment_vflip),
      member_field("augment_rot90", "random 90-degree rotations", train, &TrainConfig::augment_rot90),
      member_field("random_crop", "random crops instead of a fixed grid", train, &TrainConfig::random_crop),
      member_field("crops_per_scene", "random crops drawn per scene and epoch", train, &TrainConfig::crops_per_scene),
      member_field("checkpoint_every", "checkpoint period in epochs (0: end only)", train, &TrainConfig::checkpoint_every),
      member_field("max_steps", "stop after N optimisation steps (0: no limit)", train, &TrainConfig::max_steps),
  };
  return fields;
}

inline const ConfigField* find_config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

/// Applies one "key=value" assignment; unknown keys are errors.
inline void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = config_detail::trim(assignment.substr(0, eq));
  const std::string value = config_detail::trim(assignment.substr(eq + 1));
  const ConfigField* f = find_config_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(s, value);
}

/// Parses flat key=value text; '#' starts a comment line.
inline void apply_config_text(Settings& s, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = config_detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    try {
      apply_override(s, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(Settings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config_text(s, in, path);
}

/// Canonical key=value serialisation of every field.
inline std::string serialize(const Settings& s) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + "=" + f.get(s) + "\n";
  return out;
}

inline Settings parse_settings(const std::string& text, const std::string& source = "<text>") {
  Settings s;
  std::istringstream in(text);
  apply_config_text(s, in, source);
  return s;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string config_hash(const Settings& s) { return hex64(fnv1a(serialize(s))); }

}  // namespace epit
