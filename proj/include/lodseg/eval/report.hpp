#ifndef LODSEG_EVAL_REPORT_HPP
#define LODSEG_EVAL_REPORT_HPP

// Inference decode, per-volume Dice records and grouped aggregates.
//
// Metadata CSV: header `volume_id,site,age_months`, one row per volume.
// Age buckets (months): 0-3, 3-6, 6-9, 9-12, 12-24 (half-open, 24 inclusive);
// anything else is "other", a missing row is "unknown".
// Aggregates use the population standard deviation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/losses/dice.hpp"
#include "lodseg/nn/lod_net.hpp"
#include "lodseg/volume/conform.hpp"
#include "lodseg/volume/nifti.hpp"

namespace lodseg::eval {

inline constexpr int kReportSchemaVersion = 1;

// Argmax decode of the network output; ties go to the lowest channel.
inline LabelMap infer_volume(const nn::Network& net, const Volume& v, const ClassScheme& scheme) {
  const auto out = nn::forward(net, v);
  return argmax(out.probs, v.affine, scheme);
}

inline LabelMap infer_volume(const nn::Network& net, const Volume& v) {
  return infer_volume(net, v, ClassScheme::for_count(net.config.num_classes));
}

struct Metadata {
  std::string site = "unknown";
  std::optional<double> age_months;
};

inline std::string age_bucket(std::optional<double> months) {
  if (!months) return "unknown";
  const double m = *months;
  static const double edges[] = {0, 3, 6, 9, 12, 24};
  static const char* names[] = {"0-3", "3-6", "6-9", "9-12", "12-24"};
  for (int i = 0; i < 5; ++i) {
    const bool last = i == 4;
    if (m >= edges[i] && (m < edges[i + 1] || (last && m <= edges[i + 1]))) return names[i];
  }
  return "other";
}

inline std::map<std::string, Metadata> load_metadata(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read metadata " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv.string() + ": empty metadata file");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) {
      while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
      while (!f.empty() && f.front() == ' ') f.erase(f.begin());
      out.push_back(f);
    }
    if (!s.empty() && (s.back() == ',' || (s.size() > 1 && s.back() == '\r' && s[s.size() - 2] == ','))) out.emplace_back();
    return out;
  };
  const auto header = split(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(csv.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto ci = col("volume_id"), cs = col("site"), ca = col("age_months");
  std::map<std::string, Metadata> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    const auto f = split(line);
    if (f.size() <= std::max({ci, cs, ca}))
      throw FormatError(csv.string() + ":" + std::to_string(row) + ": too few columns");
    Metadata m;
    m.site = f[cs].empty() ? "unknown" : f[cs];
    if (!f[ca].empty()) {
      try {
        m.age_months = std::stod(f[ca]);
      } catch (const std::exception&) {
        throw FormatError(csv.string() + ":" + std::to_string(row) + ": bad age_months \"" + f[ca] + "\"");
      }
    }
    out[f[ci]] = m;
  }
  return out;
}

struct EvalRecord {
  std::string volume_id;
  std::string method;
  std::string site;
  std::string age_bucket;
  std::map<std::string, double> dice;
  double mean = 0.0;
};

struct Exclusion {
  std::string volume_id;
  std::string reason;
};

struct Aggregate {
  std::string method;
  std::string group_kind;  // all | site | age
  std::string group;
  std::string class_name;  // includes "mean"
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::vector<EvalRecord> records;
  std::vector<Exclusion> exclusions;
  std::vector<std::string> class_order;
};

inline std::vector<Aggregate> aggregate(const EvalReport& r) {
  // key: method, kind, group, class -> values
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::vector<double>> bins;
  for (const auto& rec : r.records) {
    const std::pair<std::string, std::string> groups[] = {
        {"all", "all"}, {"site", rec.site}, {"age", rec.age_bucket}};
    for (const auto& [kind, g] : groups) {
      for (const auto& [c, d] : rec.dice) bins[{rec.method, kind, g, c}].push_back(d);
      bins[{rec.method, kind, g, "mean"}].push_back(rec.mean);
    }
  }
  std::vector<Aggregate> out;
  for (const auto& [key, vals] : bins) {
    Aggregate a;
    std::tie(a.method, a.group_kind, a.group, a.class_name) = key;
    a.n = vals.size();
    for (double v : vals) a.mean += v;
    a.mean /= static_cast<double>(a.n);
    for (double v : vals) a.std += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(a.std / static_cast<double>(a.n));
    out.push_back(a);
  }
  return out;
}

namespace detail {
inline std::map<std::string, std::filesystem::path> nifti_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    for (const std::string ext : {".nii.gz", ".nii"}) {
      if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
        out[name.substr(0, name.size() - ext.size())] = e.path();
        break;
      }
    }
  }
  return out;
}
}  // namespace detail

// Pairs files by volume id (file name without .nii/.nii.gz). Unpaired ids are
// recorded as exclusions, never dropped silently.
inline EvalReport evaluate_set(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                               const std::map<std::string, Metadata>& metadata, const ClassScheme& scheme,
                               const std::string& method = "lodseg", bool include_background = false) {
  EvalReport r;
  for (int c = include_background ? 0 : 1; c < scheme.num_classes(); ++c) r.class_order.push_back(scheme.name(c));
  const auto preds = detail::nifti_files(pred_dir);
  const auto gts = detail::nifti_files(gt_dir);
  for (const auto& [id, gt_path] : gts) {
    const auto p = preds.find(id);
    if (p == preds.end()) {
      r.exclusions.push_back({id, "missing prediction"});
      continue;
    }
    EvalRecord rec;
    rec.volume_id = id;
    rec.method = method;
    const auto m = metadata.find(id);
    if (m != metadata.end()) {
      rec.site = m->second.site;
      rec.age_bucket = age_bucket(m->second.age_months);
    } else {
      rec.site = "unknown";
      rec.age_bucket = "unknown";
    }
    try {
      const auto gt = nifti::load_labels(gt_path, scheme);
      const auto pred = nifti::load_labels(p->second, scheme);
      if (pred.shape != gt.shape) {
        r.exclusions.push_back({id, "shape mismatch " + to_string(pred.shape) + " vs " + to_string(gt.shape)});
        continue;
      }
      const auto d = dice_coefficient(pred, gt, scheme, include_background);
      rec.dice = d.per_class;
      rec.mean = d.mean;
    } catch (const Error& e) {
      r.exclusions.push_back({id, e.what()});
      continue;
    }
    r.records.push_back(std::move(rec));
  }
  for (const auto& [id, path] : preds)
    if (!gts.count(id)) r.exclusions.push_back({id, "missing ground truth"});
  for (const auto& e : r.exclusions) log::warn("evaluate: excluded " + e.volume_id + " (" + e.reason + ")");
  return r;
}

inline nlohmann::json to_json(const EvalRecord& r) {
  return {{"volume_id", r.volume_id}, {"method", r.method}, {"site", r.site},
          {"age_bucket", r.age_bucket}, {"dice", r.dice},      {"mean", r.mean}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json recs = nlohmann::json::array(), exc = nlohmann::json::array(), agg = nlohmann::json::array();
  for (const auto& x : r.records) recs.push_back(to_json(x));
  for (const auto& e : r.exclusions) exc.push_back({{"volume_id", e.volume_id}, {"reason", e.reason}});
  for (const auto& a : aggregate(r))
    agg.push_back({{"method", a.method}, {"group_kind", a.group_kind}, {"group", a.group}, {"class", a.class_name},
                   {"n", a.n}, {"mean", a.mean}, {"std", a.std}});
  return {{"schema_version", r.schema_version}, {"classes", r.class_order}, {"records", recs},
          {"exclusions", exc}, {"aggregates", agg}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kReportSchemaVersion)
    throw MigrationError("report schema version " + std::to_string(r.schema_version) + " is not supported");
  r.class_order = j.value("classes", std::vector<std::string>{});
  for (const auto& x : j.at("records")) {
    EvalRecord rec;
    rec.volume_id = x.at("volume_id").get<std::string>();
    rec.method = x.at("method").get<std::string>();
    rec.site = x.value("site", "unknown");
    rec.age_bucket = x.value("age_bucket", "unknown");
    rec.dice = x.at("dice").get<std::map<std::string, double>>();
    rec.mean = x.at("mean").get<double>();
    r.records.push_back(std::move(rec));
  }
  for (const auto& e : j.value("exclusions", nlohmann::json::array()))
    r.exclusions.push_back({e.at("volume_id").get<std::string>(), e.at("reason").get<std::string>()});
  return r;
}

// report.json, records.jsonl and aggregates.csv under `dir`.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    out << to_json(r).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "records.jsonl", std::ios::trunc);
    for (const auto& x : r.records) out << to_json(x).dump() << "\n";
  }
  std::ofstream csv(dir / "aggregates.csv", std::ios::trunc);
  csv << "method,group_kind,group,class,n,mean,std\n";
  csv.precision(10);
  for (const auto& a : aggregate(r))
    csv << a.method << "," << a.group_kind << "," << a.group << "," << a.class_name << "," << a.n << "," << a.mean
        << "," << a.std << "\n";
}

// Volumes with the highest variance of method-level mean Dice, descending;
// ties broken by volume id. Methods are visited in name order so the result
// does not depend on the order of `reports`.
inline std::vector<std::string> rank_discordant(const std::vector<EvalReport>& reports, int k = 30,
                                                std::vector<std::pair<std::string, double>>* scores = nullptr) {
  std::map<std::string, std::map<std::string, double>> by_volume;  // id -> method -> mean
  for (const auto& r : reports)
    for (const auto& rec : r.records) by_volume[rec.volume_id][rec.method] = rec.mean;
  std::vector<std::pair<std::string, double>> var;
  for (const auto& [id, methods] : by_volume) {
    if (methods.size() < 2) {
      log::warn("rank_discordant: " + id + " is scored by fewer than two methods; skipped");
      continue;
    }
    // Shifted by the first score so identical scores give exactly 0.
    const double shift = methods.begin()->second;
    double mean = 0.0;
    for (const auto& [m, d] : methods) mean += d - shift;
    mean /= static_cast<double>(methods.size());
    double v = 0.0;
    for (const auto& [m, d] : methods) v += (d - shift - mean) * (d - shift - mean);
    var.emplace_back(id, v / static_cast<double>(methods.size()));
  }
  std::sort(var.begin(), var.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (k < 0) throw ConfigError("rank_discordant: k must be >= 0");
  if (static_cast<std::size_t>(k) > var.size()) {
    log::warn("rank_discordant: k = " + std::to_string(k) + " exceeds the " + std::to_string(var.size()) +
              " available volumes; returning all");
  } else {
    var.resize(static_cast<std::size_t>(k));
  }
  if (scores) *scores = var;
  std::vector<std::string> ids;
  for (const auto& [id, v] : var) ids.push_back(id);
  return ids;
}

}  // namespace lodseg::eval

#endif  // LODSEG_EVAL_REPORT_HPP
