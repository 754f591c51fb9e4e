#ifndef LODSEG_NN_ADAM_HPP
#define LODSEG_NN_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "lodseg/nn/lod_net.hpp"

namespace lodseg::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Parameters whose level is frozen in the state
// are skipped, so freezing applies to any optimizer instance.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(NetworkState<T>& state, const Gradients<T>& grads, double lr) {
    if (m_.size() != state.parameters.size()) reset(state);
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < state.parameters.size(); ++i) {
      auto& p = state.parameters[i];
      if (state.is_frozen(p.level)) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      if (m.size() != p.value.size()) {
        m.assign(p.value.size(), 0.0);
        v.assign(p.value.size(), 0.0);
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double gj = g[j];
        m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
        v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
        const double mh = m[j] / c1;
        const double vh = v[j] / c2;
        p.value[j] = static_cast<T>(p.value[j] - lr * mh / (std::sqrt(vh) + options_.epsilon));
      }
    }
  }

  void reset(const NetworkState<T>& state) {
    m_.assign(state.parameters.size(), {});
    v_.assign(state.parameters.size(), {});
    t_ = 0;
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace lodseg::nn

#endif  // LODSEG_NN_ADAM_HPP
