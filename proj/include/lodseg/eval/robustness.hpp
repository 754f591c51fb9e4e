#ifndef LODSEG_EVAL_ROBUSTNESS_HPP
#define LODSEG_EVAL_ROBUSTNESS_HPP

// Motion-robustness sweep.
//
// For every alpha, seed and sample: simulate_motion on the image, infer, and
// score against the clean labels. The motion seed of sample i under sweep
// seed s is derive_seed(s, {i}); it does not depend on alpha, so a row differs
// from the next only by the severity of the same motion pattern.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/eval/report.hpp"
#include "lodseg/motion/motion_sim.hpp"
#include "lodseg/train/synthetic.hpp"
#include "lodseg/train/trainer.hpp"

namespace lodseg::eval {

struct RobustnessRow {
  double alpha = 0.0;
  std::map<std::string, double> per_class;  // mean Dice over samples and seeds
  double mean = 0.0;
  std::size_t n = 0;
};

struct RobustnessTable {
  std::vector<std::string> class_order;
  std::vector<RobustnessRow> rows;
};

// Plain (motion-free) evaluation of `samples`, averaged like one sweep row.
inline RobustnessRow plain_row(const nn::Network& net, const std::vector<Sample>& samples, bool include_background,
                               int workers = 1) {
  if (samples.empty()) throw ConfigError("robustness: no samples");
  const auto scheme = samples.front().labels.scheme;
  std::vector<DiceResult> dice(samples.size());
  train::detail::parallel_for(samples.size(), workers, [&](std::size_t i) {
    dice[i] = dice_coefficient(infer_volume(net, samples[i].image, scheme), samples[i].labels, scheme,
                               include_background);
  });
  RobustnessRow row;
  for (const auto& d : dice) {
    for (const auto& [c, v] : d.per_class) row.per_class[c] += v;
    row.mean += d.mean;
  }
  row.n = dice.size();
  for (auto& [c, v] : row.per_class) v /= static_cast<double>(row.n);
  row.mean /= static_cast<double>(row.n);
  return row;
}

inline RobustnessTable robustness_sweep(const nn::Network& net, const std::vector<Sample>& samples,
                                        const std::vector<double>& alphas, const std::vector<std::uint64_t>& seeds,
                                        const motion::MotionSpec& base = {}, bool include_background = false,
                                        int workers = 1) {
  if (alphas.empty()) throw ConfigError("robustness: alpha grid is empty");
  if (seeds.empty()) throw ConfigError("robustness: seed list is empty");
  if (samples.empty()) throw ConfigError("robustness: no samples");
  for (double a : alphas)
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("robustness: alpha values must be >= 0");
  const auto scheme = samples.front().labels.scheme;
  for (const auto& s : samples)
    if (!(s.labels.scheme == scheme)) throw ContractError("robustness: samples mix class schemes");

  RobustnessTable table;
  for (int c = include_background ? 0 : 1; c < scheme.num_classes(); ++c) table.class_order.push_back(scheme.name(c));
  const std::size_t per_alpha = seeds.size() * samples.size();
  for (double alpha : alphas) {
    std::vector<DiceResult> dice(per_alpha);
    train::detail::parallel_for(per_alpha, workers, [&](std::size_t job) {
      const std::size_t si = job / samples.size(), i = job % samples.size();
      motion::MotionSpec spec = base;
      spec.alpha = alpha;
      spec.seed = derive_seed(seeds[si], {static_cast<std::uint64_t>(i)});
      const auto moved = motion::simulate_motion(samples[i].image, spec);
      dice[job] = dice_coefficient(infer_volume(net, moved, scheme), samples[i].labels, scheme, include_background);
    });
    RobustnessRow row;
    row.alpha = alpha;
    for (const auto& d : dice) {
      for (const auto& [c, v] : d.per_class) row.per_class[c] += v;
      row.mean += d.mean;
    }
    row.n = dice.size();
    for (auto& [c, v] : row.per_class) v /= static_cast<double>(row.n);
    row.mean /= static_cast<double>(row.n);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

// Spearman correlation: Pearson correlation of average ranks. Returns 0 when
// either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman: need two equal-length series of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double alpha_trend(const RobustnessTable& t) {
  std::vector<double> a, d;
  for (const auto& r : t.rows) {
    a.push_back(r.alpha);
    d.push_back(r.mean);
  }
  return spearman(a, d);
}

inline nlohmann::json to_json(const RobustnessTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) rows.push_back({{"alpha", r.alpha}, {"dice", r.per_class}, {"mean", r.mean}, {"n", r.n}});
  return {{"class_order", t.class_order}, {"rows", rows}};
}

inline std::string to_csv(const RobustnessTable& t) {
  std::ostringstream os;
  os.precision(17);
  os << "alpha";
  for (const auto& c : t.class_order) os << ',' << c;
  os << ",mean,n\n";
  for (const auto& r : t.rows) {
    os << r.alpha;
    for (const auto& c : t.class_order) os << ',' << r.per_class.at(c);
    os << ',' << r.mean << ',' << r.n << '\n';
  }
  return os.str();
}

}  // namespace lodseg::eval

#endif
