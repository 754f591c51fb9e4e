#ifndef LODSEG_TRAIN_RUN_CONFIG_HPP
#define LODSEG_TRAIN_RUN_CONFIG_HPP

// Declarative run configuration (INI syntax; `;` or `#` comments).
//
//   [run]            pipeline = raw | skullstripped | stage, seed, workers,
//                    out_dir, resume, target_mm, prior_checkpoint
//   [network]        preset = desk | default, then any NetworkConfig field;
//                    input_shape = N or X,Y,Z
//   [augment]        apply_probability, <row>.probability, <row>.<limit>
//   [stage.<name>]   name in adult_prior, infant_upper, skullstripped_upper,
//                    finetune; data = <block>, epochs, lr_init, lr_factor,
//                    plateau_patience, plateau_threshold, batch_size,
//                    steps_per_epoch, frozen_levels, augment = on|off,
//                    include_background, seed, checkpoint_in
//   [data.<name>]    source = synthetic | dir, corpus, count, val_count,
//                    seed, path, scheme, val_fraction
//
// Unknown sections and keys are rejected with the offending name.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/train/trainer.hpp"

namespace lodseg::train {

struct RunConfig {
  using Section = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Section>> sections;

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>") {
    boost::property_tree::ptree pt;
    std::string normalized;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      const auto first = line.find_first_not_of(" \t");
      if (first != std::string::npos && line[first] == '#') line[first] = ';';
      normalized += line + "\n";
    }
    std::istringstream in(normalized);
    try {
      boost::property_tree::ini_parser::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig rc;
    for (const auto& [name, sec] : pt) {
      if (sec.empty() && !sec.data().empty())
        throw ConfigError(origin + ": key \"" + name + "\" must be inside a [section]");
      Section s;
      for (const auto& [k, v] : sec) s.emplace_back(k, v.data());
      rc.sections.emplace_back(name, std::move(s));
    }
    return rc;
  }

  static RunConfig load(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read config " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), p.string());
  }

  std::string to_text() const {
    std::ostringstream out;
    for (const auto& [name, sec] : sections) {
      out << "[" << name << "]\n";
      for (const auto& [k, v] : sec) out << k << " = " << v << "\n";
      out << "\n";
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, sec] : sections) {
      nlohmann::json s = nlohmann::json::object();
      for (const auto& [k, v] : sec) s[k] = v;
      j[name] = s;
    }
    return j;
  }

  const Section* find(const std::string& name) const {
    for (const auto& [n, s] : sections)
      if (n == name) return &s;
    return nullptr;
  }

  std::string get(const std::string& section, const std::string& key, const std::string& fallback = {}) const {
    if (const auto* s = find(section))
      for (const auto& [k, v] : *s)
        if (k == key) return v;
    return fallback;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    for (auto& [n, s] : sections) {
      if (n != section) continue;
      for (auto& [k, v] : s)
        if (k == key) {
          v = value;
          return;
        }
      s.emplace_back(key, value);
      return;
    }
    sections.push_back({section, {{key, value}}});
  }

  // "section:key=value"
  void apply_override(const std::string& spec) {
    const auto colon = spec.find(':');
    const auto eq = spec.find('=');
    if (colon == std::string::npos || eq == std::string::npos || eq < colon)
      throw ConfigError("override \"" + spec + "\" must look like section:key=value");
    set(spec.substr(0, colon), spec.substr(colon + 1, eq - colon - 1), spec.substr(eq + 1));
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

inline long long to_int(const std::string& section, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(where(section, key) + ": expected an integer, got \"" + v + "\"");
}

inline std::uint64_t to_u64(const std::string& section, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(where(section, key) + ": expected a non-negative integer, got \"" + v + "\"");
}

inline double to_double(const std::string& section, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(where(section, key) + ": expected a number, got \"" + v + "\"");
}

inline bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ConfigError(where(section, key) + ": expected true/false, got \"" + v + "\"");
}

[[noreturn]] inline void unknown_key(const std::string& section, const std::string& key) {
  throw ConfigError("unknown key \"" + key + "\" in [" + section + "]");
}

inline void apply_network_key(nn::NetworkConfig& c, const std::string& sec, const std::string& k,
                              const std::string& v) {
  auto i = [&] { return static_cast<int>(to_int(sec, k, v)); };
  if (k == "preset") return;
  if (k == "input_shape") {
    const auto parts = split_list(v);
    if (parts.size() == 1) {
      c.input_shape = Shape3::cube(static_cast<int>(to_int(sec, k, parts[0])));
    } else if (parts.size() == 3) {
      c.input_shape = {static_cast<int>(to_int(sec, k, parts[0])), static_cast<int>(to_int(sec, k, parts[1])),
                       static_cast<int>(to_int(sec, k, parts[2]))};
    } else {
      throw ConfigError(where(sec, k) + ": expected N or X,Y,Z");
    }
  } else if (k == "num_classes") {
    c.num_classes = i();
  } else if (k == "level0_entry_filters") {
    c.level0_entry_filters = i();
  } else if (k == "level0_block_filters") {
    c.level0_block_filters = i();
  } else if (k == "level1_block_filters") {
    c.level1_block_filters = i();
  } else if (k == "level0_inner_reduction") {
    c.level0_inner_reduction = i();
  } else if (k == "level0_entry_pool") {
    c.level0_entry_pool = i();
  } else if (k == "blocks_per_stage") {
    c.blocks_per_stage = i();
  } else if (k == "level1_blocks") {
    c.level1_blocks = i();
  } else if (k == "dropout_rate") {
    c.dropout_rate = to_double(sec, k, v);
  } else if (k == "groupnorm_groups") {
    c.groupnorm_groups = i();
  } else if (k == "head_init_gain") {
    c.head_init_gain = to_double(sec, k, v);
  } else if (k == "init_seed") {
    c.init_seed = to_u64(sec, k, v);
  } else {
    unknown_key(sec, k);
  }
}

inline DataSource parse_data(const RunConfig& rc, const std::string& name, std::uint64_t run_seed) {
  const std::string sec = "data." + name;
  const auto* s = rc.find(sec);
  if (!s) throw ConfigError("data block [" + sec + "] is referenced but not defined");
  DataSource d;
  d.seed = derive_seed(run_seed, {0x64617461ULL});
  for (const auto& [k, v] : *s) {
    if (k == "source") d.kind = v;
    else if (k == "corpus") d.corpus = v;
    else if (k == "count") d.count = static_cast<int>(to_int(sec, k, v));
    else if (k == "val_count") d.val_count = static_cast<int>(to_int(sec, k, v));
    else if (k == "seed") d.seed = to_u64(sec, k, v);
    else if (k == "path") d.path = v;
    else if (k == "scheme") d.scheme = v;
    else if (k == "val_fraction") d.val_fraction = to_double(sec, k, v);
    else unknown_key(sec, k);
  }
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("[" + sec + "] " + e.what());
  }
  return d;
}

}  // namespace detail

struct ResolvedRun {
  std::string pipeline = "raw";  // raw | skullstripped | stage
  std::uint64_t seed = 0;
  int workers = 1;
  PipelineConfig pipeline_config;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> n = {"adult_prior", "infant_upper", "skullstripped_upper", "finetune"};
  return n;
}

// Validates every section and key before any work starts.
inline ResolvedRun resolve(const RunConfig& rc, std::optional<int> workers_override = {}) {
  using namespace detail;
  ResolvedRun r;
  std::set<std::string> used_data;
  for (const auto& [name, sec] : rc.sections) {
    const bool known = name == "run" || name == "network" || name == "augment" ||
                       (name.rfind("stage.", 0) == 0 &&
                        std::count(stage_names().begin(), stage_names().end(), name.substr(6))) ||
                       (name.rfind("data.", 0) == 0 && name.size() > 5);
    if (!known) throw ConfigError("unknown section [" + name + "]");
  }
  if (const auto* s = rc.find("run")) {
    for (const auto& [k, v] : *s) {
      if (k == "pipeline") r.pipeline = v;
      else if (k == "seed") r.seed = to_u64("run", k, v);
      else if (k == "workers") r.workers = static_cast<int>(to_int("run", k, v));
      else if (k == "out_dir") r.pipeline_config.out_dir = v;
      else if (k == "resume") r.pipeline_config.resume = to_bool("run", k, v);
      else if (k == "target_mm") r.pipeline_config.target_mm = to_double("run", k, v);
      else if (k == "prior_checkpoint") r.pipeline_config.prior_checkpoint = v;
      else unknown_key("run", k);
    }
  }
  if (workers_override) r.workers = *workers_override;
  if (r.workers < 1) throw ConfigError("[run] workers must be >= 1");
  if (r.pipeline != "raw" && r.pipeline != "skullstripped" && r.pipeline != "stage")
    throw ConfigError("[run] pipeline must be raw, skullstripped or stage (got \"" + r.pipeline + "\")");

  auto& net = r.pipeline_config.network;
  const std::string preset = rc.get("network", "preset", "desk");
  if (preset == "desk") net = nn::NetworkConfig::desk();
  else if (preset == "default") net = nn::NetworkConfig::full();
  else throw ConfigError("[network] preset must be desk or default (got \"" + preset + "\")");
  bool classes_given = false;
  if (const auto* s = rc.find("network"))
    for (const auto& [k, v] : *s) {
      apply_network_key(net, "network", k, v);
      classes_given |= k == "num_classes";
    }

  auto aug = augment::AugmentationSpec::table_default();
  aug.seed = r.seed;
  if (const auto* s = rc.find("augment"))
    for (const auto& [k, v] : *s) aug.set(k, to_double("augment", k, v));
  aug.validate();

  int ordinal = 0;
  for (const auto& stage_name : stage_names()) {
    const std::string sec = "stage." + stage_name;
    const auto* s = rc.find(sec);
    ++ordinal;
    if (!s) continue;
    StagePlan plan;
    plan.train.stage = parse_stage(stage_name);
    plan.train.seed = derive_seed(r.seed, {0x7374ULL, static_cast<std::uint64_t>(ordinal)});
    plan.train.workers = r.workers;
    plan.train.augmentation = aug;
    std::string data_name;
    for (const auto& [k, v] : *s) {
      if (k == "data") data_name = v;
      else if (k == "epochs") plan.train.epochs = static_cast<int>(to_int(sec, k, v));
      else if (k == "lr_init") plan.train.lr_init = to_double(sec, k, v);
      else if (k == "lr_factor") plan.train.lr_factor = to_double(sec, k, v);
      else if (k == "plateau_patience") plan.train.plateau_patience = static_cast<int>(to_int(sec, k, v));
      else if (k == "plateau_threshold") plan.train.plateau_threshold = to_double(sec, k, v);
      else if (k == "batch_size") plan.train.batch_size = static_cast<int>(to_int(sec, k, v));
      else if (k == "steps_per_epoch") plan.train.steps_per_epoch = static_cast<int>(to_int(sec, k, v));
      else if (k == "frozen_levels") plan.train.frozen_levels = nn::parse_levels(split_list(v));
      else if (k == "augment") {
        if (!to_bool(sec, k, v)) plan.train.augmentation.apply_probability = 0.0;
      } else if (k == "include_background") plan.train.include_background = to_bool(sec, k, v);
      else if (k == "seed") plan.train.seed = to_u64(sec, k, v);
      else if (k == "checkpoint_in") plan.train.checkpoint_in = v;
      else unknown_key(sec, k);
    }
    if (data_name.empty()) throw ConfigError("[" + sec + "] needs a data = <block> entry");
    plan.data = parse_data(rc, data_name, r.seed);
    used_data.insert(data_name);
    try {
      plan.train.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("[" + sec + "] " + e.what());
    }
    auto& slot = plan.train.stage == Stage::adult_prior           ? r.pipeline_config.adult_prior
                 : plan.train.stage == Stage::infant_upper        ? r.pipeline_config.infant_upper
                 : plan.train.stage == Stage::skullstripped_upper ? r.pipeline_config.skullstripped_upper
                                                                  : r.pipeline_config.finetune;
    slot = std::move(plan);
  }
  for (const auto& [name, sec] : rc.sections)
    if (name.rfind("data.", 0) == 0 && !used_data.count(name.substr(5)))
      throw ConfigError("data block [" + name + "] is not used by any stage");

  // The head width follows the first stage's label scheme unless given.
  if (!classes_given) {
    for (const auto* p : {&r.pipeline_config.adult_prior, &r.pipeline_config.infant_upper,
                          &r.pipeline_config.skullstripped_upper, &r.pipeline_config.finetune}) {
      if (*p) {
        net.num_classes = ClassScheme::preset((*p)->data.scheme).num_classes();
        break;
      }
    }
  }
  net.validate();

  const auto& pc = r.pipeline_config;
  if (r.pipeline == "raw") {
    if (!pc.adult_prior && pc.prior_checkpoint.empty())
      throw ConfigError("raw pipeline: missing [stage.adult_prior] (or [run] prior_checkpoint)");
    if (!pc.infant_upper) throw ConfigError("raw pipeline: missing stage 2 [stage.infant_upper]");
  } else if (r.pipeline == "skullstripped") {
    if (!pc.adult_prior && pc.prior_checkpoint.empty())
      throw ConfigError("skull-stripped pipeline: missing [stage.adult_prior] (or [run] prior_checkpoint)");
    if (!pc.skullstripped_upper) throw ConfigError("skull-stripped pipeline: missing [stage.skullstripped_upper]");
    if (!pc.finetune) throw ConfigError("skull-stripped pipeline: missing [stage.finetune]");
  } else {
    const int n = (pc.adult_prior ? 1 : 0) + (pc.infant_upper ? 1 : 0) + (pc.skullstripped_upper ? 1 : 0) +
                  (pc.finetune ? 1 : 0);
    if (n != 1) throw ConfigError("pipeline = stage needs exactly one [stage.*] block");
  }
  if (pc.out_dir.empty()) throw ConfigError("[run] out_dir is required");
  return r;
}

// Runs a resolved configuration: a full pipeline or one stage.
inline PipelineResult run_resolved(const ResolvedRun& r) {
  if (r.pipeline == "raw") return run_pipeline_raw(r.pipeline_config);
  if (r.pipeline == "skullstripped") return run_pipeline_skullstripped(r.pipeline_config);
  const auto& pc = r.pipeline_config;
  const std::pair<const char*, const std::optional<StagePlan>*> slots[] = {{"adult_prior", &pc.adult_prior},
                                                                           {"infant_upper", &pc.infant_upper},
                                                                           {"skullstripped_upper", &pc.skullstripped_upper},
                                                                           {"finetune", &pc.finetune}};
  for (const auto& [name, slot] : slots) {
    if (!*slot) continue;
    const StagePlan& plan = **slot;
    plan.train.validate();
    plan.data.validate();
    std::filesystem::create_directories(pc.out_dir);
    detail::PipelineState state(std::filesystem::path(pc.out_dir) / "pipeline_state.json");
    PipelineResult result;
    std::optional<nn::Network> init;
    if (plan.train.checkpoint_in.empty() && !pc.prior_checkpoint.empty() && is_transfer(plan.train.stage))
      init = nn::load_checkpoint(pc.prior_checkpoint);
    result.state = detail::run_or_resume(name, plan, pc, init ? &*init : nullptr, state, result);
    return result;
  }
  throw ConfigError("pipeline = stage needs exactly one [stage.*] block");
}

}  // namespace lodseg::train

#endif  // LODSEG_TRAIN_RUN_CONFIG_HPP
