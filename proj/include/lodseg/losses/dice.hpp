#ifndef LODSEG_LOSSES_DICE_HPP
#define LODSEG_LOSSES_DICE_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/tensor.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg {

struct DiceResult {
  std::map<std::string, double> per_class;
  std::vector<std::string> order;  // scheme order of the included classes
  double mean = 0.0;
};

// Hard Dice per class: 2|P∩G| / (|P|+|G|); 1 when the class is absent from
// both maps, 0 when absent from exactly one.
inline DiceResult dice_coefficient(const LabelMap& pred, const LabelMap& gt, const ClassScheme& scheme,
                                   bool include_background = false) {
  if (!(pred.shape == gt.shape)) {
    throw ContractError("dice_coefficient: shape mismatch " + to_string(pred.shape) + " vs " + to_string(gt.shape));
  }
  if (!(pred.scheme == gt.scheme) || !(pred.scheme == scheme)) {
    throw ContractError("dice_coefficient: class scheme mismatch");
  }
  const int c = scheme.num_classes();
  std::vector<std::size_t> inter(c, 0), np(c, 0), ng(c, 0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const Label a = pred.data[i], b = gt.data[i];
    if (a >= c || b >= c) throw ContractError("dice_coefficient: label outside the class scheme");
    ++np[a];
    ++ng[b];
    if (a == b) ++inter[a];
  }
  DiceResult r;
  double sum = 0.0;
  for (int k = include_background ? 0 : 1; k < c; ++k) {
    double d;
    if (np[k] + ng[k] == 0) {
      d = 1.0;
    } else {
      d = 2.0 * static_cast<double>(inter[k]) / static_cast<double>(np[k] + ng[k]);
    }
    r.per_class[scheme.name(k)] = d;
    r.order.push_back(scheme.name(k));
    sum += d;
  }
  r.mean = r.order.empty() ? 0.0 : sum / static_cast<double>(r.order.size());
  return r;
}

inline constexpr double kDiceEpsilon = 1e-6;

// Soft per-channel Dice loss averaged over channels:
//   1 - (1/C) sum_c (2 sum p*g + eps) / (sum p + sum g + eps)
// When `grad` is given it receives dL/dprobs.
template <typename T>
T dice_loss(const Tensor<T>& probs, const Tensor<T>& target, bool include_background = true,
            Tensor<T>* grad = nullptr, double eps = kDiceEpsilon) {
  if (!probs.same_layout(target)) throw ContractError("dice_loss: probability and target layouts differ");
  const int c = probs.channels();
  const int first = include_background ? 0 : 1;
  const int used = c - first;
  if (used <= 0) throw ContractError("dice_loss: no channels to average");
  const std::size_t n = probs.voxels();
  std::vector<double> inter(c, 0.0), sp(c, 0.0), sg(c, 0.0);
  for (int k = first; k < c; ++k) {
    auto p = probs.channel(k);
    auto g = target.channel(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double pv = p[i], gv = g[i];
      if (!std::isfinite(pv) || !std::isfinite(gv)) throw NumericError("dice_loss: non-finite input");
      inter[k] += pv * gv;
      sp[k] += pv;
      sg[k] += gv;
    }
  }
  double score = 0.0;
  for (int k = first; k < c; ++k) score += (2.0 * inter[k] + eps) / (sp[k] + sg[k] + eps);
  const double loss = 1.0 - score / used;

  if (grad) {
    *grad = Tensor<T>(c, probs.shape(), T{0});
    for (int k = first; k < c; ++k) {
      const double den = sp[k] + sg[k] + eps;
      const double num = 2.0 * inter[k] + eps;
      auto g = target.channel(k);
      auto out = grad->channel(k);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<T>(-(2.0 * g[i] * den - num) / (den * den) / used);
      }
    }
  }
  return static_cast<T>(loss);
}

}  // namespace lodseg

#endif  // LODSEG_LOSSES_DICE_HPP
