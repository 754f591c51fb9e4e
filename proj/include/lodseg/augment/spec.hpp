#ifndef LODSEG_AUGMENT_SPEC_HPP
#define LODSEG_AUGMENT_SPEC_HPP

// Augmentation specification and plan sampling.
//
// Rows are grouped as geometric -> noise -> artefacts and applied in that
// order. Each row is an independent Bernoulli draw at its probability, behind
// a per-sample gate of `apply_probability`. Row limits bound the random
// parameters resolved into a plan; every resolved transform also carries its
// own seed so a plan replays exactly without the generator that produced it.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/core/rng.hpp"

namespace lodseg::augment {

enum class Group { geometric, noise, artefact };

inline const char* to_string(Group g) {
  switch (g) {
    case Group::geometric: return "geometric";
    case Group::noise: return "noise";
    default: return "artefacts";
  }
}

using Params = std::map<std::string, double>;

struct Row {
  std::string name;
  double probability = 0.0;
  Params limits;
};

struct Range {
  double lo, hi;
};

// Admissible values for every limit and resolved parameter.
inline const std::map<std::string, std::map<std::string, Range>>& parameter_ranges() {
  static const std::map<std::string, std::map<std::string, Range>> r = {
      {"translation", {{"max_shift", {0, 64}}, {"shift_x", {-64, 64}}, {"shift_y", {-64, 64}}, {"shift_z", {-64, 64}}}},
      {"rotation", {{"max_degrees", {0, 45}}, {"deg_x", {-45, 45}}, {"deg_y", {-45, 45}}, {"deg_z", {-45, 45}}}},
      {"grid_distortion", {{"steps", {1, 32}}, {"distortion", {0, 0.5}}}},
      {"blur", {{"limit", {3, 15}}, {"ksize", {1, 15}}}},
      {"salt_pepper", {{"amount", {0, 1}}, {"salt", {0, 1}}}},
      {"gaussian", {{"amount", {0, 1}}, {"std", {0, 1}}}},
      {"downscale", {{"scale_min", {0.05, 1}}, {"scale_max", {0.05, 1}}, {"scale", {0.05, 1}}}},
      {"gamma", {{"clip", {0, 0.49}}, {"log_gamma", {0, 2}}, {"gamma", {0.1, 10}}}},
      {"contrast", {{"alpha_min", {0, 10}}, {"alpha_max", {0, 10}}, {"alpha", {0, 10}}}},
      {"ghosting",
       {{"max_repetitions", {2, 16}},
        {"intensity_min", {0, 1}},
        {"intensity_max", {0, 1}},
        {"repetitions", {2, 16}},
        {"intensity", {0, 1}},
        {"axis", {0, 2}},
        {"restore", {0, 0.5}}}},
      {"slice_spacing", {{"spacing_min", {1, 20}}, {"spacing_max", {1, 20}}, {"spacing", {1, 20}}}},
      {"inhomogeneity", {{"order", {0, 5}}, {"coefficient", {0, 1}}}},
      {"field_bias", {{"cycles", {0, 32}}, {"scale_factor", {1, 10}}}},
  };
  return r;
}

inline Group group_of(const std::string& transform) {
  if (transform == "translation" || transform == "rotation" || transform == "grid_distortion") return Group::geometric;
  if (transform == "ghosting" || transform == "slice_spacing" || transform == "inhomogeneity" ||
      transform == "field_bias")
    return Group::artefact;
  if (parameter_ranges().count(transform)) return Group::noise;
  throw ConfigError("unknown augmentation transform \"" + transform + "\"");
}

// Throws ConfigError when a key is unknown for `transform` or out of range.
inline void check_params(const std::string& transform, const Params& p) {
  const auto it = parameter_ranges().find(transform);
  if (it == parameter_ranges().end()) throw ConfigError("unknown augmentation transform \"" + transform + "\"");
  for (const auto& [k, v] : p) {
    const auto r = it->second.find(k);
    if (r == it->second.end()) throw ConfigError("augmentation " + transform + ": unknown parameter \"" + k + "\"");
    if (!std::isfinite(v) || v < r->second.lo || v > r->second.hi) {
      throw ConfigError("augmentation " + transform + ": " + k + " = " + std::to_string(v) + " outside [" +
                        std::to_string(r->second.lo) + ", " + std::to_string(r->second.hi) + "]");
    }
  }
}

struct AugmentationSpec {
  double apply_probability = 0.9;
  std::vector<Row> geometric;
  std::vector<Row> noise;
  std::vector<Row> artefacts;
  std::uint64_t seed = 0;

  // The published table of rows, probabilities and parameters.
  static AugmentationSpec table_default() {
    AugmentationSpec s;
    const double g = 1.0 / 3.0, n = 1.0 / 9.0;
    s.geometric = {{"translation", g, {{"max_shift", 20}}},
                   {"rotation", g, {{"max_degrees", 10}}},
                   {"grid_distortion", g, {{"steps", 4}, {"distortion", 0.1}}}};
    s.noise = {{"blur", n, {{"limit", 3}}},
               {"salt_pepper", n, {{"amount", 0.01}, {"salt", 0.2}}},
               {"gaussian", n, {{"amount", 0.2}}},
               {"downscale", n, {{"scale_min", 0.25}, {"scale_max", 0.75}}},
               {"gamma", n, {{"clip", 0.025}, {"log_gamma", 0.3}}},
               {"contrast", n, {{"alpha_min", 0.5}, {"alpha_max", 3.0}}}};
    s.artefacts = {{"ghosting", n, {{"max_repetitions", 4}, {"intensity_min", 0.5}, {"intensity_max", 1.0}}},
                   {"slice_spacing", n, {{"spacing_min", 2}, {"spacing_max", 5}}},
                   {"inhomogeneity", 1.0, {{"order", 3}, {"coefficient", 0.1}}},
                   {"field_bias", n, {{"cycles", 5}, {"scale_factor", 2}}}};
    return s;
  }

  static AugmentationSpec disabled() {
    auto s = table_default();
    s.apply_probability = 0.0;
    return s;
  }

  std::vector<const Row*> rows() const {
    std::vector<const Row*> out;
    for (const auto* g : {&geometric, &noise, &artefacts})
      for (const auto& r : *g) out.push_back(&r);
    return out;
  }

  Row* find(const std::string& name) {
    for (auto* g : {&geometric, &noise, &artefacts})
      for (auto& r : *g)
        if (r.name == name) return &r;
    return nullptr;
  }

  void validate() const {
    if (!(apply_probability >= 0.0 && apply_probability <= 1.0))
      throw ConfigError("augmentation: apply_probability must be in [0,1]");
    for (const auto* r : rows()) {
      if (!(r->probability >= 0.0 && r->probability <= 1.0))
        throw ConfigError("augmentation " + r->name + ": probability must be in [0,1]");
      check_params(r->name, r->limits);
    }
  }

  // Key/value form used in run-config blocks: "apply_probability",
  // "<row>.probability", "<row>.<limit>", "seed".
  void set(const std::string& key, double value) {
    if (key == "apply_probability") {
      apply_probability = value;
      return;
    }
    if (key == "seed") {
      seed = static_cast<std::uint64_t>(value);
      return;
    }
    const auto dot = key.find('.');
    Row* row = dot == std::string::npos ? nullptr : find(key.substr(0, dot));
    if (!row) throw ConfigError("augmentation: unknown key \"" + key + "\"");
    const std::string field = key.substr(dot + 1);
    if (field == "probability") {
      row->probability = value;
    } else if (row->limits.count(field)) {
      row->limits[field] = value;
    } else {
      throw ConfigError("augmentation: unknown key \"" + key + "\"");
    }
  }

  std::map<std::string, double> to_kv() const {
    std::map<std::string, double> kv{{"apply_probability", apply_probability}, {"seed", static_cast<double>(seed)}};
    for (const auto* r : rows()) {
      kv[r->name + ".probability"] = r->probability;
      for (const auto& [k, v] : r->limits) kv[r->name + "." + k] = v;
    }
    return kv;
  }
};

struct PlannedTransform {
  std::string name;
  Group group = Group::noise;
  Params params;
  std::uint64_t seed = 0;
};

using Plan = std::vector<PlannedTransform>;

namespace detail {

inline Params resolve(const Row& row, Rng& rng) {
  const auto& l = row.limits;
  const std::string& n = row.name;
  if (n == "translation") {
    const double m = l.at("max_shift");
    return {{"shift_x", uniform(rng, -m, m)}, {"shift_y", uniform(rng, -m, m)}, {"shift_z", uniform(rng, -m, m)}};
  }
  if (n == "rotation") {
    const double m = l.at("max_degrees");
    return {{"deg_x", uniform(rng, -m, m)}, {"deg_y", uniform(rng, -m, m)}, {"deg_z", uniform(rng, -m, m)}};
  }
  if (n == "grid_distortion") return {{"steps", l.at("steps")}, {"distortion", l.at("distortion")}};
  if (n == "blur") {
    const int hi = static_cast<int>(l.at("limit"));
    const int k = 3 + 2 * uniform_int(rng, 0, std::max(0, (hi - 3) / 2));
    return {{"ksize", static_cast<double>(k)}};
  }
  if (n == "salt_pepper") return {{"amount", l.at("amount")}, {"salt", l.at("salt")}};
  if (n == "gaussian") return {{"std", uniform(rng, 0.0, l.at("amount"))}};
  if (n == "downscale") return {{"scale", uniform(rng, l.at("scale_min"), l.at("scale_max"))}};
  if (n == "gamma") {
    const double lg = l.at("log_gamma");
    return {{"gamma", std::exp(uniform(rng, -lg, lg))}, {"clip", l.at("clip")}};
  }
  if (n == "contrast") return {{"alpha", uniform(rng, l.at("alpha_min"), l.at("alpha_max"))}};
  if (n == "ghosting") {
    return {{"repetitions", static_cast<double>(uniform_int(rng, 2, static_cast<int>(l.at("max_repetitions"))))},
            {"intensity", uniform(rng, l.at("intensity_min"), l.at("intensity_max"))},
            {"axis", static_cast<double>(uniform_int(rng, 0, 2))},
            {"restore", 0.02}};
  }
  if (n == "slice_spacing") return {{"spacing", uniform(rng, l.at("spacing_min"), l.at("spacing_max"))}};
  if (n == "inhomogeneity") return {{"order", l.at("order")}, {"coefficient", l.at("coefficient")}};
  if (n == "field_bias") return {{"cycles", l.at("cycles")}, {"scale_factor", l.at("scale_factor")}};
  throw ConfigError("unknown augmentation transform \"" + n + "\"");
}

}  // namespace detail

inline Plan sample_plan(const AugmentationSpec& spec, Rng& rng) {
  Plan plan;
  if (!bernoulli(rng, spec.apply_probability)) return plan;
  for (const auto* row : spec.rows()) {
    if (!bernoulli(rng, row->probability)) continue;
    PlannedTransform t;
    t.name = row->name;
    t.group = group_of(row->name);
    t.params = detail::resolve(*row, rng);
    t.seed = rng();
    plan.push_back(std::move(t));
  }
  return plan;
}

inline nlohmann::json plan_to_json(const Plan& plan) {
  auto out = nlohmann::json::array();
  for (const auto& t : plan)
    out.push_back({{"transform", t.name}, {"group", to_string(t.group)}, {"params", t.params}, {"seed", t.seed}});
  return out;
}

inline Plan plan_from_json(const nlohmann::json& j) {
  Plan plan;
  for (const auto& e : j) {
    PlannedTransform t;
    t.name = e.at("transform").get<std::string>();
    t.group = group_of(t.name);
    t.params = e.at("params").get<Params>();
    t.seed = e.at("seed").get<std::uint64_t>();
    plan.push_back(std::move(t));
  }
  return plan;
}

}  // namespace lodseg::augment

#endif  // LODSEG_AUGMENT_SPEC_HPP
