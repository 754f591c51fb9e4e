#ifndef LODSEG_CLI_DISPATCH_HPP
#define LODSEG_CLI_DISPATCH_HPP

// Command-line front end.
//
// Every subcommand is parsed into a canonical JSON argument object and run by
// one executor. The run's manifest stores that object together with seeds,
// worker count, environment and library versions; `lodseg replay MANIFEST`
// feeds the stored arguments back to the same executor (optionally with a new
// --out), so outputs are reproduced bit for bit.
//
// Exit codes: 0 success, 1 validation error (bad flags, bad config, contract
// violations, missing inputs), 2 runtime error.

#include <fftw3.h>
#include <zlib.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lodseg/augment/spec.hpp"
#include "lodseg/augment/transforms.hpp"
#include "lodseg/core/error.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/eval/plots.hpp"
#include "lodseg/eval/report.hpp"
#include "lodseg/eval/robustness.hpp"
#include "lodseg/eval/surface.hpp"
#include "lodseg/motion/motion_sim.hpp"
#include "lodseg/nn/checkpoint.hpp"
#include "lodseg/nn/lod_net.hpp"
#include "lodseg/train/dataset.hpp"
#include "lodseg/train/run_config.hpp"
#include "lodseg/train/synthetic.hpp"
#include "lodseg/volume/conform.hpp"
#include "lodseg/volume/nifti.hpp"

#ifndef LODSEG_VERSION
#define LODSEG_VERSION "0.0.0"
#endif

namespace lodseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kManifestSchemaVersion = 1;

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

struct Context {
  int workers = 1;
  std::ostream* out = &std::cout;
};

struct RunOutput {
  std::vector<fs::path> outputs;
  fs::path manifest;
  json summary = json::object();
};

namespace detail {

inline void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

inline void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline Shape3 parse_shape(const std::string& s) {
  std::vector<int> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("shape \"" + s + "\" must be N or X,Y,Z");
    }
  }
  Shape3 out;
  if (v.size() == 1) out = Shape3::cube(v[0]);
  else if (v.size() == 3) out = Shape3{v[0], v[1], v[2]};
  else throw ConfigError("shape \"" + s + "\" must be N or X,Y,Z");
  if (!out.positive()) throw ConfigError("shape must be positive");
  return out;
}

inline json shape_json(Shape3 s) { return json::array({s.x, s.y, s.z}); }
inline Shape3 shape_from(const json& j) { return Shape3{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

inline ClassScheme scheme_for(const std::string& name, int num_classes) {
  if (name.empty()) return ClassScheme::for_count(num_classes);
  auto s = ClassScheme::preset(name);
  if (s.num_classes() != num_classes)
    throw ContractError("scheme " + name + " has " + std::to_string(s.num_classes()) + " classes, the checkpoint " +
                        std::to_string(num_classes));
  return s;
}

inline std::string preset_for_count(int n) {
  if (n == 4) return "ss4";
  if (n == 7) return "raw7";
  if (n == 8) return "raw8";
  throw ConfigError("no class scheme preset with " + std::to_string(n) + " classes; pass --scheme");
}

inline std::string stem(const fs::path& p) {
  const auto id = train::detail::strip_nifti_ext(p.filename().string());
  return id.empty() ? p.stem().string() : id;
}

inline std::vector<fs::path> nifti_inputs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && !train::detail::strip_nifti_ext(e.path().filename().string()).empty())
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Mid-slice (z) grayscale preview as binary PGM.
inline void write_pgm(const Volume& v, const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << "P5\n" << v.shape.x << " " << v.shape.y << "\n255\n";
  const int k = v.shape.z / 2;
  for (int j = v.shape.y - 1; j >= 0; --j)
    for (int i = 0; i < v.shape.x; ++i) {
      const float x = std::clamp(v.at(i, j, k), 0.0f, 1.0f);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0f))));
    }
}

inline fs::path sidecar(const std::string& out, const char* suffix) { return fs::path(out + suffix); }

// ------------------------------------------------------------------ commands

inline RunOutput run_conform(const json& a, const Context&) {
  require_input(a.at("in"), "--in");
  ConformOptions opt;
  opt.target_mm = a.at("mm");
  opt.target_shape = shape_from(a.at("shape"));
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  if (a.at("labels").get<bool>()) {
    opt.interp = Interp::nearest;
    const auto l = conform(nifti::load_labels(a.at("in").get<std::string>(), ClassScheme::preset(a.at("scheme").get<std::string>())), opt);
    nifti::save_labels(l, out);
  } else {
    const std::string interp = a.at("interp");
    if (interp == "linear") opt.interp = Interp::linear;
    else if (interp == "nearest") opt.interp = Interp::nearest;
    else throw ConfigError("--interp must be linear or nearest");
    auto v = conform(nifti::load_volume(a.at("in").get<std::string>()), opt);
    if (a.at("normalize").get<bool>()) v = normalize_intensity(v);
    nifti::save_volume(v, out);
  }
  return {{out}, sidecar(out, ".manifest.json"), {{"output", out}}};
}

inline RunOutput run_train(const json& a, const Context& ctx) {
  auto rc = train::RunConfig::parse(a.at("config_text").get<std::string>(), "manifest config");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("an output directory is required ([run] out_dir or --out)");
  rc.set("run", "out_dir", out);
  const auto resolved = train::resolve(rc, ctx.workers);
  fs::create_directories(out);
  {
    std::ofstream cfg(fs::path(out) / "run_config.ini", std::ios::trunc);
    cfg << rc.to_text();
  }
  const auto result = train::run_resolved(resolved);
  const auto final_ckpt = fs::path(out) / "final.ckpt";
  nn::save_checkpoint(result.state, final_ckpt);
  json stages = json::array();
  for (const auto& [name, r] : result.stages)
    stages.push_back({{"stage", name},
                      {"best_epoch", r.best_epoch},
                      {"best_val_loss", r.best_val_loss},
                      {"final_lr", r.final_lr},
                      {"plateaus", r.plateaus},
                      {"epochs_run", r.log.size()}});
  json summary = {{"final_val_loss", result.final_val_loss},
                  {"stages", stages},
                  {"resumed", result.skipped},
                  {"parameter_count", nn::parameter_count(result.state.config)},
                  {"checkpoint", final_ckpt.filename().string()}};
  write_json(fs::path(out) / "train_summary.json", summary);
  return {{final_ckpt, fs::path(out) / "train_summary.json"}, fs::path(out) / "manifest.json", summary};
}

inline RunOutput run_infer(const json& a, const Context& ctx) {
  require_input(a.at("checkpoint"), "--checkpoint");
  require_input(a.at("in"), "--in");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  const auto net = nn::load_checkpoint(a.at("checkpoint").get<std::string>());
  const auto scheme = scheme_for(a.at("scheme"), net.config.num_classes);
  const bool prepare = a.at("prepare");
  const double mm = a.at("mm");
  const fs::path in = a.at("in").get<std::string>();
  const bool dir = fs::is_directory(in);
  std::vector<fs::path> inputs = dir ? nifti_inputs(in) : std::vector<fs::path>{in};
  if (inputs.empty()) throw ConfigError("no NIfTI inputs under " + in.string());
  std::vector<fs::path> outputs(inputs.size());
  if (dir) fs::create_directories(out);
  train::detail::parallel_for(inputs.size(), ctx.workers, [&](std::size_t i) {
    auto v = nifti::load_volume(inputs[i]);
    if (prepare) v = train::prepare_image(v, net.config.input_shape, mm);
    const auto labels = eval::infer_volume(net, v, scheme);
    outputs[i] = dir ? fs::path(out) / (stem(inputs[i]) + ".nii.gz") : fs::path(out);
    nifti::save_labels(labels, outputs[i]);
  });
  return {outputs, dir ? fs::path(out) / "manifest.json" : sidecar(out, ".manifest.json"),
          {{"volumes", inputs.size()}, {"scheme", scheme.names()}}};
}

inline RunOutput run_evaluate(const json& a, const Context&) {
  require_input(a.at("gt"), "--gt");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  if (a.at("pred").empty()) throw ConfigError("at least one --pred is required");
  for (const auto& [m, d] : a.at("pred").items()) require_input(d.get<std::string>(), "--pred");
  const auto scheme = ClassScheme::preset(a.at("scheme").get<std::string>());
  std::map<std::string, eval::Metadata> meta;
  if (!a.at("metadata").get<std::string>().empty()) {
    require_input(a.at("metadata"), "--metadata");
    meta = eval::load_metadata(a.at("metadata").get<std::string>());
  }
  const int k = a.at("top_k");
  if (k < 0) throw ConfigError("--top-k must be >= 0");
  RunOutput r;
  r.manifest = fs::path(out) / "manifest.json";
  std::vector<eval::EvalReport> reports;
  json methods = json::object();
  for (const auto& [method, dir] : a.at("pred").items()) {
    auto rep = eval::evaluate_set(dir.get<std::string>(), a.at("gt").get<std::string>(), meta, scheme, method,
                                  a.at("include_background"));
    const auto mdir = fs::path(out) / method;
    eval::write_report(rep, mdir);
    for (const auto& p : eval::write_boxplots(rep, mdir / "plots")) r.outputs.push_back(p);
    r.outputs.push_back(mdir / "report.json");
    json all = json::object();
    for (const auto& g : eval::aggregate(rep))
      if (g.group_kind == "all") all[g.class_name] = {{"mean", g.mean}, {"std", g.std}, {"n", g.n}};
    methods[method] = {{"records", rep.records.size()}, {"exclusions", rep.exclusions.size()}, {"all", all}};
    reports.push_back(std::move(rep));
  }
  r.summary["methods"] = methods;
  if (reports.size() >= 2) {
    std::vector<std::pair<std::string, double>> scores;
    eval::rank_discordant(reports, k, &scores);
    json d = json::array();
    for (const auto& [id, v] : scores) d.push_back({{"volume_id", id}, {"variance", v}});
    write_json(fs::path(out) / "discordant.json", d);
    r.outputs.push_back(fs::path(out) / "discordant.json");
    r.summary["discordant"] = d;
  }
  return r;
}

inline train::DataSource data_source(const json& d, int num_classes) {
  train::DataSource s;
  s.kind = d.at("source");
  s.scheme = d.at("scheme").get<std::string>().empty() ? preset_for_count(num_classes) : d.at("scheme").get<std::string>();
  s.seed = d.at("seed");
  if (s.kind == "dir") {
    s.path = d.at("path");
    s.val_fraction = 0.0;
  } else {
    s.corpus = d.at("corpus");
    s.count = d.at("count");
    s.val_count = 0;
  }
  return s;
}

inline RunOutput run_robustness(const json& a, const Context& ctx) {
  require_input(a.at("checkpoint"), "--checkpoint");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  const auto alphas = a.at("alphas").get<std::vector<double>>();
  const auto seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
  if (alphas.empty()) throw ConfigError("robustness: alpha grid is empty");
  const auto net = nn::load_checkpoint(a.at("checkpoint").get<std::string>());
  const auto src = data_source(a.at("data"), net.config.num_classes);
  if (src.kind == "dir") require_input(src.path, "--data");
  if (ClassScheme::preset(src.scheme).num_classes() != net.config.num_classes)
    throw ContractError("data scheme " + src.scheme + " does not match the checkpoint's " +
                        std::to_string(net.config.num_classes) + " classes");
  motion::MotionSpec spec;
  spec.num_events = a.at("num_events");
  spec.translation_scale = a.at("translation_scale");
  spec.rotation_scale = a.at("rotation_scale");
  spec.phase_axis = a.at("phase_axis");
  spec.validate();
  auto split = train::load_data(src, net.config.input_shape, a.at("mm"));
  auto samples = std::move(split.train);
  for (auto& s : split.val) samples.push_back(std::move(s));
  const bool bg = a.at("include_background");
  const auto plain = eval::plain_row(net, samples, bg, ctx.workers);
  const auto table = eval::robustness_sweep(net, samples, alphas, seeds, spec, bg, ctx.workers);
  const double rho = table.rows.size() >= 2 ? eval::alpha_trend(table) : 0.0;
  json j = eval::to_json(table);
  j["plain"] = {{"dice", plain.per_class}, {"mean", plain.mean}, {"n", plain.n}};
  j["spearman_alpha_mean"] = rho;
  const fs::path dir(out);
  write_json(dir / "robustness.json", j);
  {
    std::ofstream csv(dir / "robustness.csv", std::ios::trunc);
    csv << eval::to_csv(table);
  }
  const auto plot = eval::write_alpha_plot(table, dir);
  return {{dir / "robustness.json", dir / "robustness.csv", plot}, dir / "manifest.json", j};
}

inline RunOutput run_augment_preview(const json& a, const Context&) {
  require_input(a.at("in"), "--in");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  auto spec = augment::AugmentationSpec::table_default();
  for (const auto& [k, v] : a.at("set").items()) spec.set(k, v.get<double>());
  spec.validate();
  const int count = a.at("count");
  if (count < 1) throw ConfigError("--count must be >= 1");
  const auto image = nifti::load_volume(a.at("in").get<std::string>());
  std::optional<LabelMap> labels;
  if (!a.at("labels").get<std::string>().empty()) {
    require_input(a.at("labels"), "--labels");
    labels = nifti::load_labels(a.at("labels").get<std::string>(), ClassScheme::preset(a.at("scheme").get<std::string>()));
    if (!labels->matches(image)) throw ContractError("--labels geometry differs from --in");
  }
  const fs::path dir(out);
  fs::create_directories(dir);
  RunOutput r{{}, dir / "manifest.json", {}};
  json plans = json::array();
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(a.at("seed").get<std::uint64_t>(), {static_cast<std::uint64_t>(i)});
    const auto plan = augment::sample_plan(spec, rng);
    const auto res = augment::apply_plan(image, labels ? &*labels : nullptr, plan);
    const std::string base = "aug_" + std::to_string(i);
    nifti::save_volume(res.image, dir / (base + ".nii.gz"));
    write_pgm(res.image, dir / (base + ".pgm"));
    write_json(dir / (base + "_plan.json"), augment::plan_to_json(plan));
    r.outputs.insert(r.outputs.end(), {dir / (base + ".nii.gz"), dir / (base + ".pgm"), dir / (base + "_plan.json")});
    if (res.labels) {
      nifti::save_labels(*res.labels, dir / (base + "_labels.nii.gz"));
      r.outputs.push_back(dir / (base + "_labels.nii.gz"));
    }
    plans.push_back(augment::plan_to_json(plan));
  }
  r.summary = {{"plans", plans}};
  return r;
}

inline RunOutput run_motion_sim(const json& a, const Context&) {
  require_input(a.at("in"), "--in");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  motion::MotionSpec spec;
  spec.alpha = a.at("alpha");
  spec.seed = a.at("seed");
  spec.num_events = a.at("num_events");
  spec.translation_scale = a.at("translation_scale");
  spec.rotation_scale = a.at("rotation_scale");
  spec.phase_axis = a.at("phase_axis");
  spec.validate();
  motion::MotionPlan plan;
  const auto moved = motion::simulate_motion(nifti::load_volume(a.at("in").get<std::string>()), spec, &plan);
  nifti::save_volume(moved, out);
  const auto plan_path = sidecar(out, ".plan.json");
  write_json(plan_path, motion::plan_to_json(plan));
  return {{out, plan_path}, sidecar(out, ".manifest.json"), {{"plan", motion::plan_to_json(plan)}}};
}

inline RunOutput run_mesh(const json& a, const Context&) {
  require_input(a.at("in"), "--in");
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  const auto l = nifti::load_labels(a.at("in").get<std::string>(), ClassScheme::preset(a.at("scheme").get<std::string>()));
  const auto m = eval::extract_surface(l, a.at("target"), a.at("smoothing"));
  eval::write_ply(m, out);
  return {{out},
          sidecar(out, ".manifest.json"),
          {{"vertices", m.vertices.size()}, {"faces", m.faces.size()}, {"area_mm2", m.area()}, {"watertight", m.watertight()}}};
}

inline RunOutput run_synth(const json& a, const Context&) {
  const std::string out = a.at("out");
  if (out.empty()) throw ConfigError("--out is required");
  const auto corpus = synth::parse_corpus(a.at("corpus"));
  const auto scheme = ClassScheme::preset(a.at("scheme").get<std::string>());
  const int count = a.at("count");
  const auto samples = synth::make_corpus(corpus, count, shape_from(a.at("shape")), scheme, a.at("seed"));
  const fs::path dir(out);
  RunOutput r{{}, dir / "manifest.json", {{"volumes", samples.size()}}};
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (const auto& s : samples) {
    nifti::save_volume(s.image, dir / "images" / (s.id + ".nii.gz"));
    nifti::save_labels(s.labels, dir / "labels" / (s.id + ".nii.gz"));
    r.outputs.push_back(dir / "images" / (s.id + ".nii.gz"));
    r.outputs.push_back(dir / "labels" / (s.id + ".nii.gz"));
  }
  return r;
}

using Executor = std::function<RunOutput(const json&, const Context&)>;

inline const std::map<std::string, Executor>& executors() {
  static const std::map<std::string, Executor> e = {
      {"conform", run_conform},     {"train", run_train},
      {"infer", run_infer},         {"evaluate", run_evaluate},
      {"robustness", run_robustness}, {"augment-preview", run_augment_preview},
      {"motion-sim", run_motion_sim}, {"mesh", run_mesh},
      {"synth", run_synth}};
  return e;
}

inline json seeds_of(const json& args) {
  json s = json::object();
  for (const auto& [k, v] : args.items()) {
    if (k.find("seed") != std::string::npos) s[k] = v;
    if (v.is_object() && v.contains("seed")) s[k + ".seed"] = v["seed"];
  }
  if (args.contains("config_text")) {
    const auto rc = train::RunConfig::parse(args["config_text"].get<std::string>());
    for (const auto& [name, sec] : rc.sections)
      for (const auto& [k, v] : sec)
        if (k == "seed") s[name + ".seed"] = v;
  }
  return s;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline json build_info() {
  return {{"lodseg", LODSEG_VERSION},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"zlib", std::string(zlibVersion())},
          {"fftw", std::string(fftw_version)}};
}

}  // namespace detail

// Runs one command and writes its manifest; returns the run output.
inline RunOutput execute(const std::string& command, const json& args, const Context& ctx,
                         const std::string& replayed_from = {}) {
  const auto it = detail::executors().find(command);
  if (it == detail::executors().end()) throw ConfigError("unknown command \"" + command + "\"");
  const auto started = detail::utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  auto r = it->second(args, ctx);
  const char* cache = std::getenv("LODSEG_CACHE");
  json outputs = json::array();
  for (const auto& p : r.outputs) outputs.push_back(p.string());
  json m = {{"schema_version", kManifestSchemaVersion},
            {"tool", "lodseg"},
            {"command", command},
            {"args", args},
            {"seeds", detail::seeds_of(args)},
            {"workers", ctx.workers},
            {"environment", {{"LODSEG_CACHE", cache ? json(cache) : json(nullptr)}}},
            {"build", detail::build_info()},
            {"outputs", outputs},
            {"summary", r.summary},
            {"started_utc", started},
            {"duration_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  if (!replayed_from.empty()) m["replayed_from"] = replayed_from;
  detail::write_json(r.manifest, m);
  return r;
}

inline json load_manifest(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("manifest not found: " + p.string());
  std::ifstream in(p);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + p.string() + ": " + e.what());
  }
  if (m.value("tool", "") != "lodseg" || !m.contains("command") || !m.contains("args"))
    throw FormatError("manifest " + p.string() + " is not a lodseg run manifest");
  if (m.value("schema_version", 0) != kManifestSchemaVersion)
    throw MigrationError("manifest schema version " + std::to_string(m.value("schema_version", 0)) +
                         " is not supported (expected " + std::to_string(kManifestSchemaVersion) + ")");
  const std::string built = m.at("build").value("lodseg", "");
  if (built != LODSEG_VERSION) log::warn("manifest was written by lodseg " + built + ", replaying with " LODSEG_VERSION);
  return m;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e)) return kValidation;
  return kRuntime;
}

// Parses argv, runs the selected subcommand and maps errors to exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using detail::shape_json;
  CLI::App app{"lodseg: level-of-detail brain MRI segmentation", "lodseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", LODSEG_VERSION);
  std::optional<int> workers;
  std::string log_level = "info";
  app.add_option("--workers", workers, "Worker threads (default: config value or 1)")->check(CLI::PositiveNumber);
  app.add_option("--log-level", log_level, "debug | info | warning | error | quiet")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "quiet"}));
  app.fallthrough();

  json args = json::object();
  std::string command;
  std::vector<std::function<void()>> finalizers;
  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->callback([&command, name] { command = name; });
    return s;
  };

  // conform
  struct {
    std::string in, out, shape = "256", scheme = "raw7", interp = "linear";
    double mm = 1.0;
    bool labels = false, normalize = false;
  } cf;
  auto* c_conform = sub("conform", "Resample to RAS+ isotropic grid");
  c_conform->add_option("--in", cf.in, "Input NIfTI")->required();
  c_conform->add_option("--out", cf.out, "Output NIfTI")->required();
  c_conform->add_option("--mm", cf.mm, "Voxel size in mm")->capture_default_str();
  c_conform->add_option("--shape", cf.shape, "Grid extent: N or X,Y,Z")->capture_default_str();
  c_conform->add_flag("--labels", cf.labels, "Input is a label map (nearest neighbour)");
  c_conform->add_option("--scheme", cf.scheme, "Class scheme of a label map")->capture_default_str();
  c_conform->add_option("--interp", cf.interp, "linear | nearest (images)")->capture_default_str();
  c_conform->add_flag("--normalize", cf.normalize, "Percentile-normalize the conformed image to [0,1]");
  finalizers.push_back([&] {
    if (command != "conform") return;
    args = {{"in", cf.in},         {"out", cf.out},       {"mm", cf.mm},         {"shape", shape_json(detail::parse_shape(cf.shape))},
            {"labels", cf.labels}, {"scheme", cf.scheme}, {"interp", cf.interp}, {"normalize", cf.normalize}};
  });

  // train
  struct {
    std::string config, out;
    std::vector<std::string> set;
    bool resume = false;
  } tr;
  auto* c_train = sub("train", "Run a training pipeline or a single stage from a config file");
  c_train->add_option("--config", tr.config, "INI run configuration")->required();
  c_train->add_option("--set", tr.set, "Override section:key=value (repeatable; flags win)");
  c_train->add_option("--out", tr.out, "Output directory (overrides [run] out_dir)");
  c_train->add_flag("--resume", tr.resume, "Skip stages whose checkpoints exist");
  finalizers.push_back([&] {
    if (command != "train") return;
    detail::require_input(tr.config, "--config");
    auto rc = train::RunConfig::load(tr.config);
    for (const auto& s : tr.set) rc.apply_override(s);
    if (tr.resume) rc.set("run", "resume", "true");
    if (!tr.out.empty()) rc.set("run", "out_dir", tr.out);
    train::resolve(rc, workers);
    args = {{"config_text", rc.to_text()}, {"out", rc.get("run", "out_dir")}};
    if (!workers) workers = static_cast<int>(train::detail::to_int("run", "workers", rc.get("run", "workers", "1")));
  });

  // infer
  struct {
    std::string checkpoint, in, out, scheme;
    double mm = 1.0;
    bool raw = false;
  } in;
  auto* c_infer = sub("infer", "Segment a volume or a directory of volumes");
  c_infer->add_option("--checkpoint", in.checkpoint, "Network checkpoint")->required();
  c_infer->add_option("--in", in.in, "Input NIfTI file or directory")->required();
  c_infer->add_option("--out", in.out, "Output file or directory")->required();
  c_infer->add_option("--scheme", in.scheme, "Class scheme (default: from the class count)");
  c_infer->add_option("--mm", in.mm, "Conform voxel size")->capture_default_str();
  c_infer->add_flag("--no-prepare", in.raw, "Input is already conformed and normalized");
  finalizers.push_back([&] {
    if (command != "infer") return;
    args = {{"checkpoint", in.checkpoint}, {"in", in.in},   {"out", in.out},
            {"scheme", in.scheme},         {"mm", in.mm},   {"prepare", !in.raw}};
  });

  // evaluate
  struct {
    std::vector<std::string> pred;
    std::string gt, metadata, scheme = "raw7", out;
    bool background = false;
    int top_k = 30;
  } ev;
  auto* c_eval = sub("evaluate", "Per-structure Dice reports, plots and discordance ranking");
  c_eval->add_option("--pred", ev.pred, "Prediction directory, optionally NAME=DIR (repeatable)")->required();
  c_eval->add_option("--gt", ev.gt, "Ground-truth directory")->required();
  c_eval->add_option("--metadata", ev.metadata, "CSV with volume_id,site,age_months");
  c_eval->add_option("--scheme", ev.scheme, "Class scheme")->capture_default_str();
  c_eval->add_flag("--include-background", ev.background, "Score the background class too");
  c_eval->add_option("--top-k", ev.top_k, "Discordant volumes to list")->capture_default_str();
  c_eval->add_option("--out", ev.out, "Output directory")->required();
  finalizers.push_back([&] {
    if (command != "evaluate") return;
    json pred = json::object();
    for (const auto& p : ev.pred) {
      const auto eq = p.find('=');
      const std::string name = eq == std::string::npos ? "lodseg" : p.substr(0, eq);
      if (pred.contains(name)) throw ConfigError("duplicate method name \"" + name + "\" in --pred");
      pred[name] = eq == std::string::npos ? p : p.substr(eq + 1);
    }
    args = {{"pred", pred},         {"gt", ev.gt},   {"metadata", ev.metadata},
            {"scheme", ev.scheme},  {"out", ev.out}, {"include_background", ev.background},
            {"top_k", ev.top_k}};
  });

  // robustness
  struct {
    std::string checkpoint, data, synthetic, scheme, out;
    int count = 4, num_events = 4, phase_axis = -1;
    std::uint64_t data_seed = 0;
    std::vector<double> alphas{0.0, 0.5, 1.0, 2.0};
    std::vector<std::uint64_t> seeds{0};
    double translation_scale = 2.0, rotation_scale = 2.0, mm = 1.0;
    bool background = false;
  } rb;
  auto* c_rob = sub("robustness", "Dice under increasing synthetic motion");
  c_rob->add_option("--checkpoint", rb.checkpoint, "Network checkpoint")->required();
  auto* o_data = c_rob->add_option("--data", rb.data, "Paired directory (images/, labels/)");
  auto* o_syn = c_rob->add_option("--synthetic", rb.synthetic, "Synthetic corpus: adult | infant | skullstripped");
  o_data->excludes(o_syn);
  c_rob->add_option("--count", rb.count, "Synthetic volumes")->capture_default_str();
  c_rob->add_option("--data-seed", rb.data_seed, "Synthetic corpus seed")->capture_default_str();
  c_rob->add_option("--scheme", rb.scheme, "Class scheme (default: from the class count)");
  c_rob->add_option("--alphas", rb.alphas, "Severity grid")->delimiter(',')->capture_default_str();
  c_rob->add_option("--seeds", rb.seeds, "Motion seeds")->delimiter(',')->capture_default_str();
  c_rob->add_option("--num-events", rb.num_events, "Motion events per volume")->capture_default_str();
  c_rob->add_option("--translation-scale", rb.translation_scale, "Voxels per unit alpha")->capture_default_str();
  c_rob->add_option("--rotation-scale", rb.rotation_scale, "Degrees per unit alpha")->capture_default_str();
  c_rob->add_option("--phase-axis", rb.phase_axis, "-1 (seeded), 0, 1 or 2")->capture_default_str();
  c_rob->add_option("--mm", rb.mm, "Conform voxel size for directory data")->capture_default_str();
  c_rob->add_flag("--include-background", rb.background, "Score the background class too");
  c_rob->add_option("--out", rb.out, "Output directory")->required();
  finalizers.push_back([&] {
    if (command != "robustness") return;
    if (rb.data.empty() && rb.synthetic.empty()) throw ConfigError("robustness needs --data or --synthetic");
    json data = {{"source", rb.data.empty() ? "synthetic" : "dir"}, {"path", rb.data}, {"corpus", rb.synthetic},
                 {"count", rb.count}, {"seed", rb.data_seed}, {"scheme", rb.scheme}};
    args = {{"checkpoint", rb.checkpoint}, {"data", data},
            {"alphas", rb.alphas},         {"seeds", rb.seeds},
            {"num_events", rb.num_events}, {"translation_scale", rb.translation_scale},
            {"rotation_scale", rb.rotation_scale}, {"phase_axis", rb.phase_axis},
            {"mm", rb.mm},                 {"include_background", rb.background},
            {"out", rb.out}};
  });

  // augment-preview
  struct {
    std::string in, labels, scheme = "raw7", out;
    std::vector<std::string> set;
    int count = 4;
    std::uint64_t seed = 0;
  } ap;
  auto* c_aug = sub("augment-preview", "Sample augmentation plans and write the augmented volumes");
  c_aug->add_option("--in", ap.in, "Input image")->required();
  c_aug->add_option("--labels", ap.labels, "Optional label map that follows geometric transforms");
  c_aug->add_option("--scheme", ap.scheme, "Class scheme of --labels")->capture_default_str();
  c_aug->add_option("--count", ap.count, "Plans to sample")->capture_default_str();
  c_aug->add_option("--seed", ap.seed, "Plan seed")->capture_default_str();
  c_aug->add_option("--set", ap.set, "Augmentation override key=value, e.g. rotation.probability=1");
  c_aug->add_option("--out", ap.out, "Output directory")->required();
  finalizers.push_back([&] {
    if (command != "augment-preview") return;
    json set = json::object();
    for (const auto& s : ap.set) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set \"" + s + "\" must look like key=value");
      set[s.substr(0, eq)] = train::detail::to_double("augment", s.substr(0, eq), s.substr(eq + 1));
    }
    args = {{"in", ap.in}, {"labels", ap.labels}, {"scheme", ap.scheme}, {"count", ap.count},
            {"seed", ap.seed}, {"set", set}, {"out", ap.out}};
  });

  // motion-sim
  struct {
    std::string in, out;
    double alpha = 1.0, translation_scale = 2.0, rotation_scale = 2.0;
    std::uint64_t seed = 0;
    int num_events = 4, phase_axis = -1;
  } ms;
  auto* c_motion = sub("motion-sim", "Simulate k-space motion artefacts");
  c_motion->add_option("--in", ms.in, "Input image")->required();
  c_motion->add_option("--out", ms.out, "Output image")->required();
  c_motion->add_option("--alpha", ms.alpha, "Severity")->capture_default_str();
  c_motion->add_option("--seed", ms.seed, "Motion seed")->capture_default_str();
  c_motion->add_option("--num-events", ms.num_events, "Motion events")->capture_default_str();
  c_motion->add_option("--translation-scale", ms.translation_scale, "Voxels per unit alpha")->capture_default_str();
  c_motion->add_option("--rotation-scale", ms.rotation_scale, "Degrees per unit alpha")->capture_default_str();
  c_motion->add_option("--phase-axis", ms.phase_axis, "-1 (seeded), 0, 1 or 2")->capture_default_str();
  finalizers.push_back([&] {
    if (command != "motion-sim") return;
    args = {{"in", ms.in},
            {"out", ms.out},
            {"alpha", ms.alpha},
            {"seed", ms.seed},
            {"num_events", ms.num_events},
            {"translation_scale", ms.translation_scale},
            {"rotation_scale", ms.rotation_scale},
            {"phase_axis", ms.phase_axis}};
  });

  // mesh
  struct {
    std::string in, out, scheme = "raw7", target = "outer_gm";
    int smoothing = 10;
  } me;
  auto* c_mesh = sub("mesh", "Extract a class surface as ASCII PLY");
  c_mesh->add_option("--in", me.in, "Label map")->required();
  c_mesh->add_option("--out", me.out, "Output .ply")->required();
  c_mesh->add_option("--scheme", me.scheme, "Class scheme")->capture_default_str();
  c_mesh->add_option("--target", me.target, "Class name, inner_gm or outer_gm")->capture_default_str();
  c_mesh->add_option("--smoothing", me.smoothing, "Smoothing iterations")->capture_default_str();
  finalizers.push_back([&] {
    if (command != "mesh") return;
    args = {{"in", me.in}, {"out", me.out}, {"scheme", me.scheme}, {"target", me.target}, {"smoothing", me.smoothing}};
  });

  // synth
  struct {
    std::string corpus = "adult", scheme = "raw7", shape = "32", out;
    int count = 4;
    std::uint64_t seed = 0;
  } sy;
  auto* c_synth = sub("synth", "Write a synthetic phantom corpus as images/ and labels/");
  c_synth->add_option("--corpus", sy.corpus, "adult | infant | skullstripped")->capture_default_str();
  c_synth->add_option("--scheme", sy.scheme, "Class scheme")->capture_default_str();
  c_synth->add_option("--shape", sy.shape, "Grid extent: N or X,Y,Z")->capture_default_str();
  c_synth->add_option("--count", sy.count, "Volumes")->capture_default_str();
  c_synth->add_option("--seed", sy.seed, "Corpus seed")->capture_default_str();
  c_synth->add_option("--out", sy.out, "Output directory")->required();
  finalizers.push_back([&] {
    if (command != "synth") return;
    args = {{"corpus", sy.corpus}, {"scheme", sy.scheme}, {"shape", shape_json(detail::parse_shape(sy.shape))},
            {"count", sy.count},   {"seed", sy.seed},     {"out", sy.out}};
  });

  // params (prints only, no outputs)
  std::string preset = "default";
  int classes = 7;
  auto* c_params = sub("params", "Print the trainable parameter count of a network preset");
  c_params->add_option("--preset", preset, "default | desk")->check(CLI::IsMember({"default", "desk"}))->capture_default_str();
  c_params->add_option("--classes", classes, "Output classes")->capture_default_str();

  // replay
  std::string manifest_path, replay_out;
  auto* c_replay = sub("replay", "Re-run a command from its manifest");
  c_replay->add_option("manifest", manifest_path, "Manifest JSON written by a previous run")->required();
  c_replay->add_option("--out", replay_out, "Redirect the primary output");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        app.exit(e, out, err);
        return kOk;
      }
      std::string what = e.what();
      int first = 1;
      while (first < argc && argv[first][0] == '-') {
        const std::string opt = argv[first];
        first += (opt == "--workers" || opt == "--log-level") ? 2 : 1;
      }
      if (first < argc && !app.get_subcommand_no_throw(argv[first]))
        what = std::string("unknown subcommand \"") + argv[first] + "\"";
      err << "error: " << what << "\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kValidation;
    }
    static const std::map<std::string, log::Level> levels = {{"debug", log::Level::debug},
                                                             {"info", log::Level::info},
                                                             {"warning", log::Level::warning},
                                                             {"error", log::Level::error},
                                                             {"quiet", log::Level::quiet}};
    log::set_level(levels.at(log_level));
    for (auto& f : finalizers) f();

    if (command == "params") {
      auto c = preset == "desk" ? nn::NetworkConfig::desk(classes) : nn::NetworkConfig{};
      c.num_classes = classes;
      c.validate();
      out << nn::parameter_count(c) << "\n";
      return kOk;
    }
    Context ctx;
    ctx.out = &out;
    RunOutput r;
    if (command == "replay") {
      const auto m = load_manifest(manifest_path);
      json replay_args = m.at("args");
      if (!replay_out.empty()) replay_args["out"] = replay_out;
      ctx.workers = workers.value_or(m.value("workers", 1));
      r = execute(m.at("command"), replay_args, ctx, manifest_path);
    } else {
      ctx.workers = workers.value_or(1);
      r = execute(command, args, ctx);
    }
    out << r.summary.dump(2) << "\n";
    out << "manifest: " << r.manifest.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    return code;
  }
}

}  // namespace lodseg::cli

#endif  // LODSEG_CLI_DISPATCH_HPP
