// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "epit/config.hpp"
#include "epit/error.hpp"
#include "epit/eval.hpp"
#include "epit/gradcheck_suite.hpp"
#include "epit/lf_io.hpp"
#include "epit/model.hpp"
#include "epit/synthetic.hpp"
#include "epit/train.hpp"

namespace epit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

/// Parsed command line.
struct RunConfig {
  std::string subcommand;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> scale;
  std::vector<std::string> overrides;
  std::string in;
  std::string out;
  std::string model;
  std::string trace;
  std::string grid;
  std::string shear = "-2..2";
  std::string orient = "h";
  std::string mode = "micro";
  std::size_t block = 0;
  std::size_t group = 0;
  std::size_t shave = 0;
  std::size_t threads = 1;
  std::size_t count = 4;
  std::size_t views = 5;
  std::size_t size = 64;
  double disparity = 1.0;
};

inline const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {"gen-synth", "train", "sr", "eval", "shear-sweep",
                                                 "attn-dump", "gradcheck", "param-count"};
  return names;
}

namespace detail {

inline void add_config_flags(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--config", rc.config_path, "flat key=value config file");
  sub->add_option("--set", rc.overrides, "override one config key (key=value), repeatable");
}

inline void add_seed(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--seed", rc.seed, "random seed (default: config seed)");
}

inline void add_scale(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--scale", rc.scale, "spatial upscaling factor")->check(CLI::IsMember({2, 4}));
}

inline void add_eval_flags(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--model", rc.model, "checkpoint file, or 'bicubic'")->required();
  sub->add_option("--in", rc.in, "HR scene or directory of scenes")->required();
  add_scale(sub, rc);
  sub->add_option("--shave", rc.shave, "border pixels excluded from the metrics");
  sub->add_option("--threads", rc.threads, "worker threads")->check(CLI::PositiveNumber);
}

}  // namespace detail

/// Builds the command-line parser bound to `rc`.
inline std::unique_ptr<CLI::App> build_app(RunConfig& rc) {
  auto app = std::make_unique<CLI::App>("Light-field super-resolution with EPI transformers", "epit");
  app->require_subcommand(1);
  app->fallthrough(false);

  CLI::App* gen = app->add_subcommand("gen-synth", "write synthetic constant-disparity scenes");
  gen->add_option("--out", rc.out, "output directory")->required();
  detail::add_seed(gen, rc);
  gen->add_option("--count", rc.count, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--views", rc.views, "angular views per axis")->check(CLI::PositiveNumber);
  gen->add_option("--size", rc.size, "spatial extent per view")->check(CLI::PositiveNumber);
  gen->add_option("--disparity", rc.disparity, "disparity in pixels per angular step");

  CLI::App* train = app->add_subcommand("train", "train a model on a scene directory");
  train->add_option("--in", rc.in, "HR scene or directory of scenes")->required();
  train->add_option("--out", rc.out, "final checkpoint path")->required();
  train->add_option("--trace", rc.trace, "loss trace CSV (default: <out stem>.loss.csv)");
  detail::add_config_flags(train, rc);
  detail::add_seed(train, rc);
  detail::add_scale(train, rc);

  CLI::App* sr = app->add_subcommand("sr", "super-resolve a light field");
  sr->add_option("--model", rc.model, "checkpoint file")->required();
  sr->add_option("--in", rc.in, "LR light field (LF4D file or view directory)")->required();
  sr->add_option("--out", rc.out, "output LF4D file")->required();
  detail::add_scale(sr, rc);

  CLI::App* ev = app->add_subcommand("eval", "per-view PSNR/SSIM against HR scenes");
  detail::add_eval_flags(ev, rc);
  ev->add_option("--out", rc.out, "metrics CSV (scene,u,v,psnr,ssim)")->required();
  ev->add_option("--grid", rc.grid, "directory for per-scene u,v,psnr grids");

  CLI::App* sweep = app->add_subcommand("shear-sweep", "metrics under added disparity");
  detail::add_eval_flags(sweep, rc);
  sweep->add_option("--shear", rc.shear, "integer shear range a..b");
  sweep->add_option("--out", rc.out, "sweep CSV (shear,psnr,ssim)")->required();

  CLI::App* attn = app->add_subcommand("attn-dump", "export one attention matrix");
  attn->add_option("--model", rc.model, "checkpoint file")->required();
  attn->add_option("--in", rc.in, "input light field")->required();
  attn->add_option("--block", rc.block, "block index");
  attn->add_option("--orient", rc.orient, "EPI orientation")->check(CLI::IsMember({"h", "v"}));
  attn->add_option("--group", rc.group, "EPI group (u*H+h for h, v*W+w for v)");
  attn->add_option("--out", rc.out, "output stem; writes <stem>.lf4d and <stem>.png")->required();

  CLI::App* gc = app->add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--mode", rc.mode, "micro: full suite, ops: primitives only")
      ->check(CLI::IsMember({"micro", "ops"}));
  detail::add_seed(gc, rc);
  gc->add_option("--out", rc.out, "report file (default: stdout only)");

  CLI::App* pc = app->add_subcommand("param-count", "learnable parameter count");
  detail::add_config_flags(pc, rc);
  detail::add_scale(pc, rc);
  pc->add_option("--out", rc.out, "report file (default: stdout only)");

  for (CLI::App* sub : app->get_subcommands([](CLI::App*) { return true; })) sub->fallthrough(false);
  return app;
}

/// Help for the selected subcommand; the top-level help lists every flag of
/// every subcommand.
inline std::string help_text(const CLI::App& app) {
  for (const CLI::App* sub : app.get_subcommands())
    if (sub->parsed()) return app.help();
  return app.help("", CLI::AppFormatMode::All);
}

namespace detail {

inline Settings load_settings(const RunConfig& rc) {
  Settings s;
  if (!rc.config_path.empty()) apply_config_file(s, rc.config_path);
  for (const auto& o : rc.overrides) apply_override(s, o);
  if (rc.seed) s.train.seed = *rc.seed;
  if (rc.scale) s.model.alpha = s.train.alpha = *rc.scale;
  return s;
}

inline bool is_scene_path(const std::filesystem::path& p) {
  if (std::filesystem::is_directory(p)) return std::filesystem::exists(p / "lf.meta");
  return p.extension() == ".lf4d";
}

/// A single scene, or every scene (LF4D file or view directory) inside a
/// directory, sorted by name.
inline std::vector<NamedScene> load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError(path.string() + ": no such file or directory");
  if (is_scene_path(path) || !std::filesystem::is_directory(path)) {
    return {{path.stem().string(), load_lf(path)}};
  }
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(path))
    if (is_scene_path(e.path())) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  if (entries.empty()) throw DataError(path.string() + ": no scenes (.lf4d files or view directories)");
  std::vector<NamedScene> out;
  for (const auto& p : entries) out.push_back({p.stem().string(), load_lf(p)});
  return out;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot create");
  return os;
}

inline std::size_t require_scale(const RunConfig& rc, std::size_t model_alpha) {
  if (rc.scale && *rc.scale != model_alpha) {
    throw ConfigError("--scale " + std::to_string(*rc.scale) + " does not match the model's alpha " +
                      std::to_string(model_alpha));
  }
  return model_alpha;
}

struct LoadedModel {
  std::unique_ptr<SrModel> model;
  Settings settings;
};

inline LoadedModel load_model(const RunConfig& rc) {
  LoadedModel m;
  if (rc.model == "bicubic") {
    m.settings.model.alpha = m.settings.train.alpha = rc.scale.value_or(2);
    m.model = std::make_unique<BicubicModel>(m.settings.model.alpha);
  } else {
    EpitWeights<float> w = load_checkpoint<float>(rc.model);
    if (w.config().mode != Mode::spatial_sr) throw ConfigError(rc.model + ": evaluation needs a spatial_sr model");
    m.settings.model = w.config();
    m.settings.train.alpha = require_scale(rc, w.config().alpha);
    m.model = std::make_unique<EpitModel>(std::move(w), std::filesystem::path(rc.model).filename().string());
  }
  return m;
}

inline std::string eval_hash(const LoadedModel& m, const RunConfig& rc, const std::string& extra = "") {
  return hex64(fnv1a(serialize(m.settings) + "model=" + m.model->id() + "\nshave=" + std::to_string(rc.shave) +
                     "\n" + extra));
}

inline std::vector<int> parse_shear_range(const std::string& range) {
  const auto dots = range.find("..");
  try {
    if (dots == std::string::npos) throw std::invalid_argument(range);
    std::size_t ua = 0, ub = 0;
    const std::string sa = range.substr(0, dots), sb = range.substr(dots + 2);
    const int a = std::stoi(sa, &ua);
    const int b = std::stoi(sb, &ub);
    if (ua != sa.size() || ub != sb.size() || a > b) throw std::invalid_argument(range);
    std::vector<int> out;
    for (int s = a; s <= b; ++s) out.push_back(s);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("--shear: expected an integer range a..b with a <= b, got '" + range + "'");
  }
}

inline int run_gen_synth(const RunConfig& rc, std::ostream& out) {
  const std::uint64_t seed = rc.seed.value_or(0);
  const std::filesystem::path dir(rc.out);
  std::filesystem::create_directories(dir);
  std::ofstream manifest = open_output(dir / "manifest.csv");
  const std::string params = "count=" + std::to_string(rc.count) + "\nviews=" + std::to_string(rc.views) +
                             "\nsize=" + std::to_string(rc.size) + "\ndisparity=" + csv_number(rc.disparity) +
                             "\nseed=" + std::to_string(seed) + "\n";
  write_provenance(manifest, hex64(fnv1a(params)));
  manifest << "scene,disparity,texture_seed\n";
  for (std::size_t i = 0; i < rc.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu", i);
    const std::uint64_t tex_seed = mix_seed(seed, i);
    save_lf(make_synthetic_scene({rc.views, rc.views, rc.size, rc.size, rc.disparity, tex_seed}),
            dir / (std::string(name) + ".lf4d"));
    manifest << name << "," << csv_number(rc.disparity) << "," << tex_seed << "\n";
  }
  out << "wrote " << rc.count << " scenes to " << dir.string() << "\n";
  return kExitOk;
}

inline int run_train(const RunConfig& rc, std::ostream& out) {
  const Settings s = load_settings(rc);
  s.model.validate();
  s.train.validate();
  std::vector<LightField> scenes;
  for (auto& scene : load_dataset(rc.in)) scenes.push_back(std::move(scene.lf));
  EpitWeights<float> w(s.model);
  xavier_init(w, mix_seed(s.train.seed, 0x1417));
  const std::filesystem::path ckpt(rc.out);
  std::filesystem::path trace(rc.trace);
  if (trace.empty()) trace = ckpt.parent_path() / (ckpt.stem().string() + ".loss.csv");
  const TrainResult r = train_loop(scenes, std::move(w), s.train, {trace, ckpt, config_hash(s)});
  out << "steps " << r.trace.size() << ", final loss " << csv_number(r.trace.back().loss) << "\n";
  return kExitOk;
}

inline int run_sr(const RunConfig& rc, std::ostream& out) {
  const EpitWeights<float> w = load_checkpoint<float>(rc.model);
  if (w.config().mode == Mode::spatial_sr) require_scale(rc, w.config().alpha);
  LightField lf = load_lf(rc.in);
  if (lf.extents().c == 3 && w.config().in_channels == 1) lf = rgb_to_y(lf);
  const LightField sr = epit_forward(lf, w);
  save_lf(sr, rc.out);
  out << lf.extents().str() << " -> " << sr.extents().str() << "\n";
  return kExitOk;
}

inline int run_eval(const RunConfig& rc, std::ostream& out) {
  const LoadedModel m = load_model(rc);
  const auto scenes = load_dataset(rc.in);
  const EvalOptions opt{rc.shave, rc.threads};
  const MetricReport rep = evaluate_dataset(*m.model, scenes, opt);
  const std::string hash = eval_hash(m, rc);
  std::ofstream os = open_output(rc.out);
  write_metrics_csv(os, rep, hash);
  if (!rc.grid.empty()) {
    for (const auto& scene : scenes) {
      std::ofstream g = open_output(std::filesystem::path(rc.grid) / (scene.name + "_grid.csv"));
      write_grid_csv(g, perspective_grid(*m.model, scene.lf, opt), hash);
    }
  }
  out << "psnr " << csv_number(rep.psnr()) << " ssim " << csv_number(rep.ssim()) << "\n";
  return kExitOk;
}

inline int run_shear_sweep(const RunConfig& rc, std::ostream& out) {
  const std::vector<int> shears = parse_shear_range(rc.shear);
  const LoadedModel m = load_model(rc);
  const auto rows = shear_sweep(*m.model, load_dataset(rc.in), shears, {rc.shave, rc.threads});
  std::ofstream os = open_output(rc.out);
  write_sweep_csv(os, rows, eval_hash(m, rc, "shear=" + rc.shear + "\n"));
  for (const auto& r : rows) out << "shear " << r.shear << " psnr " << csv_number(r.psnr) << "\n";
  return kExitOk;
}

inline int run_attn_dump(const RunConfig& rc, std::ostream& out) {
  const EpitWeights<float> w = load_checkpoint<float>(rc.model);
  LightField lf = load_lf(rc.in);
  if (lf.extents().c == 3 && w.config().in_channels == 1) lf = rgb_to_y(lf);
  const Orientation o = rc.orient == "h" ? Orientation::horizontal : Orientation::vertical;
  const AttentionDump d = attn_dump(w, lf, rc.block, o, rc.group);
  const std::filesystem::path stem(rc.out);
  save_lf(d.slices(), stem.string() + ".lf4d");
  write_attention_png(d, stem.string() + ".png");
  out << "attention " << d.tokens() << "x" << d.tokens() << " (" << d.angular << " views, " << d.len
      << " positions)\n";
  return kExitOk;
}

inline int run_gradcheck(const RunConfig& rc, std::ostream& out) {
  const std::uint64_t seed = rc.seed.value_or(1);
  std::vector<GradCheckResult> results = op_gradient_suite(seed);
  if (rc.mode == "micro") {
    results.push_back(transformer_gradient_check(seed + 1));
    results.push_back(micro_model_gradient_check(seed + 2));
    results.push_back(micro_asr_gradient_check(seed + 3));
  }
  std::ostringstream report;
  bool all = true;
  for (const auto& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-28s checked=%-6zu max_rel=%.3e worst=%s\n",
                  r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.checked, r.max_rel_error, r.worst.c_str());
    report << line;
    all = all && r.passed();
  }
  out << report.str();
  if (!rc.out.empty()) open_output(rc.out) << report.str();
  if (!all) throw NumericError("gradcheck: at least one check exceeded the tolerance");
  return kExitOk;
}

inline int run_param_count(const RunConfig& rc, std::ostream& out) {
  const Settings s = load_settings(rc);
  s.model.validate();
  std::map<std::string, std::size_t> groups;
  std::vector<std::string> order;
  for (const auto& p : parameter_layout(s.model)) {
    const std::string top = p.name.substr(0, p.name.find('.'));
    if (!groups.count(top)) order.push_back(top);
    groups[top] += shape_size(p.shape);
  }
  std::ostringstream report;
  report << "# config_hash=" << config_hash(s) << "\ncomponent,params\n";
  for (const auto& g : order) report << g << "," << groups[g] << "\n";
  report << "total," << param_count(s.model) << "\n";
  out << report.str();
  if (!rc.out.empty()) open_output(rc.out) << report.str();
  return kExitOk;
}

}  // namespace detail

/// Runs one subcommand; returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  auto app = build_app(rc);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << help_text(*app);
      return kExitOk;
    }
    err << "epit: " << e.what() << "\n";
    return kExitUsage;
  }
  for (CLI::App* sub : app->get_subcommands())
    if (sub->parsed()) rc.subcommand = sub->get_name();

  try {
    if (rc.subcommand == "gen-synth") return detail::run_gen_synth(rc, out);
    if (rc.subcommand == "train") return detail::run_train(rc, out);
    if (rc.subcommand == "sr") return detail::run_sr(rc, out);
    if (rc.subcommand == "eval") return detail::run_eval(rc, out);
    if (rc.subcommand == "shear-sweep") return detail::run_shear_sweep(rc, out);
    if (rc.subcommand == "attn-dump") return detail::run_attn_dump(rc, out);
    if (rc.subcommand == "gradcheck") return detail::run_gradcheck(rc, out);
    if (rc.subcommand == "param-count") return detail::run_param_count(rc, out);
    err << "epit: unknown subcommand\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "epit: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "epit: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "epit: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "epit: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace epit::cli
