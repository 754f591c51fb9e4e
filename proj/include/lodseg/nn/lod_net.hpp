#ifndef LODSEG_NN_LOD_NET_HPP
#define LODSEG_NN_LOD_NET_HPP

// Two-level Level-of-Detail segmentation network.
//
// Level 0 runs on the input max-pooled by `level0_entry_pool` (P):
//
//   x0 = maxpool_P(x)
//   s0 = enc_B(entry(x0))                      entry: 1 -> F0e, enc: -> F0
//   f0 = upsample_d(bottom(maxpool_d(s0))) + s0
//
// Level 1 runs at full resolution and receives f0 through an additive
// cross-level connection:
//
//   s1 = entry1(x)                             1 -> F0
//   h  = mid(maxpool_P(s1) + f0)               F0 -> F1 (level1_blocks blocks)
//   g  = dec(upsample_P(h)) + s1               F1 -> F0
//   probs = softmax(head(g))                   1x1x1, F0 -> C
//
// Every block is conv3x3x3 -> GroupNorm -> ReLU -> dropout. Parameter counts
// follow from parameter_count() and do not depend on the input extent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/core/tensor.hpp"
#include "lodseg/nn/layers.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg::nn {

enum class Level { level0 = 0, level1 = 1, head = 2 };

inline std::string to_string(Level l) {
  switch (l) {
    case Level::level0: return "0";
    case Level::level1: return "1";
    default: return "head";
  }
}

inline Level parse_level(std::string_view s) {
  if (s == "0" || s == "level0") return Level::level0;
  if (s == "1" || s == "level1") return Level::level1;
  if (s == "head") return Level::head;
  throw ContractError("unknown network level \"" + std::string(s) + "\" (expected 0, 1 or head)");
}

using LevelSet = std::set<Level>;

inline LevelSet parse_levels(const std::vector<std::string>& names) {
  LevelSet out;
  for (const auto& n : names) out.insert(parse_level(n));
  return out;
}

struct NetworkConfig {
  Shape3 input_shape = Shape3::cube(256);
  int num_classes = 7;
  int level0_entry_filters = 32;
  int level0_block_filters = 64;
  int level1_block_filters = 128;
  int level0_inner_reduction = 4;
  int level0_entry_pool = 2;
  int blocks_per_stage = 2;
  int level1_blocks = 1;
  double dropout_rate = 0.05;
  int groupnorm_groups = 8;
  double head_init_gain = 0.1;  // scales the He draw of the 1x1x1 head
  std::uint64_t init_seed = 0;

  // Full-size whole-head model.
  static NetworkConfig full(int num_classes = 7) {
    NetworkConfig c;
    c.num_classes = num_classes;
    return c;
  }

  // Narrow 32^3 variant used for desk-scale training and tests.
  static NetworkConfig desk(int num_classes = 4) {
    NetworkConfig c;
    c.input_shape = Shape3::cube(32);
    c.num_classes = num_classes;
    c.level0_entry_filters = 8;
    c.level0_block_filters = 16;
    c.level1_block_filters = 32;
    c.groupnorm_groups = 4;
    return c;
  }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string("network config: ") + what + " must be positive");
    };
    positive(input_shape.x, "input_shape.x");
    positive(input_shape.y, "input_shape.y");
    positive(input_shape.z, "input_shape.z");
    positive(level0_entry_filters, "level0_entry_filters");
    positive(level0_block_filters, "level0_block_filters");
    positive(level1_block_filters, "level1_block_filters");
    positive(level0_inner_reduction, "level0_inner_reduction");
    positive(level0_entry_pool, "level0_entry_pool");
    positive(blocks_per_stage, "blocks_per_stage");
    positive(level1_blocks, "level1_blocks");
    positive(groupnorm_groups, "groupnorm_groups");
    if (num_classes < 2) throw ConfigError("network config: num_classes must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("network config: dropout_rate must be in [0,1)");
    if (!(head_init_gain > 0.0 && head_init_gain <= 1.0)) throw ConfigError("network config: head_init_gain must be in (0,1]");
    const int div = level0_entry_pool * level0_inner_reduction;
    for (int a = 0; a < 3; ++a) {
      if (input_shape[a] % div != 0) {
        throw ConfigError("network config: input extent " + lodseg::to_string(input_shape) + " is not divisible by " +
                          std::to_string(level0_entry_pool) + " x " + std::to_string(level0_inner_reduction));
      }
    }
    for (int f : {level0_entry_filters, level0_block_filters, level1_block_filters}) {
      if (f % groupnorm_groups != 0) {
        throw ConfigError("network config: filter count " + std::to_string(f) + " not divisible by " +
                          std::to_string(groupnorm_groups) + " groups");
      }
    }
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// One conv layer (+ optional GroupNorm) of the topology.
struct BlockSpec {
  std::string name;
  Level level;
  int in_channels;
  int out_channels;
  int kernel;
  bool normalized;

  std::size_t parameter_count() const {
    std::size_t w = static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel * kernel;
    return w + out_channels + (normalized ? 2u * out_channels : 0u);
  }
};

struct Topology {
  BlockSpec entry0;
  std::vector<BlockSpec> enc0;
  BlockSpec bottom0;
  BlockSpec entry1;
  std::vector<BlockSpec> mid1;
  BlockSpec dec1;
  BlockSpec head;

  std::vector<const BlockSpec*> blocks() const {
    std::vector<const BlockSpec*> out{&entry0};
    for (const auto& b : enc0) out.push_back(&b);
    out.push_back(&bottom0);
    out.push_back(&entry1);
    for (const auto& b : mid1) out.push_back(&b);
    out.push_back(&dec1);
    out.push_back(&head);
    return out;
  }
};

inline Topology make_topology(const NetworkConfig& c) {
  const int f0e = c.level0_entry_filters, f0 = c.level0_block_filters, f1 = c.level1_block_filters;
  Topology t;
  t.entry0 = {"l0.entry", Level::level0, 1, f0e, 3, true};
  for (int i = 0; i < c.blocks_per_stage; ++i)
    t.enc0.push_back({"l0.enc" + std::to_string(i), Level::level0, i == 0 ? f0e : f0, f0, 3, true});
  t.bottom0 = {"l0.bottom", Level::level0, f0, f0, 3, true};
  t.entry1 = {"l1.entry", Level::level1, 1, f0, 3, true};
  for (int i = 0; i < c.level1_blocks; ++i)
    t.mid1.push_back({"l1.mid" + std::to_string(i), Level::level1, i == 0 ? f0 : f1, f1, 3, true});
  t.dec1 = {"l1.dec", Level::level1, f1, f0, 3, true};
  t.head = {"head", Level::head, f0, c.num_classes, 1, false};
  return t;
}

// Closed form: sum over layers of k^3*cin*cout + cout (+ 2*cout for GroupNorm).
inline std::size_t parameter_count(const NetworkConfig& c) {
  std::size_t total = 0;
  const Topology topo = make_topology(c);
  for (const auto* b : topo.blocks()) total += b->parameter_count();
  return total;
}

inline std::size_t head_parameter_count(int in_channels, int num_classes) {
  return static_cast<std::size_t>(in_channels) * num_classes + static_cast<std::size_t>(num_classes);
}

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Level level = Level::level0;
  std::vector<T> value;
};

template <typename T>
struct NetworkState {
  NetworkConfig config;
  std::vector<Parameter<T>> parameters;
  LevelSet frozen_levels;
  std::uint64_t head_generation = 0;  // bumped by swap_head

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters) n += p.value.size();
    return n;
  }

  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters)
      if (!frozen_levels.count(p.level)) n += p.value.size();
    return n;
  }

  const Parameter<T>& parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return p;
    throw ContractError("no parameter named " + name);
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < parameters.size(); ++i)
      if (parameters[i].name == name) return static_cast<int>(i);
    throw ContractError("no parameter named " + name);
  }

  bool is_frozen(Level l) const { return frozen_levels.count(l) > 0; }
};

using Network = NetworkState<float>;

template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const NetworkState<T>& s) {
  Gradients<T> g(s.parameters.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i].assign(s.parameters[i].value.size(), T{0});
  return g;
}

namespace detail {

template <typename T>
void init_block(std::vector<Parameter<T>>& params, const BlockSpec& b, Rng& rng, double gain = 1.0) {
  const int taps = b.kernel * b.kernel * b.kernel;
  const int fan_in = b.in_channels * taps;
  std::normal_distribution<double> he(0.0, gain * std::sqrt(2.0 / fan_in));
  Parameter<T> w{b.name + ".weight", {b.out_channels, b.in_channels, b.kernel, b.kernel, b.kernel}, b.level, {}};
  w.value.resize(static_cast<std::size_t>(b.out_channels) * fan_in);
  for (auto& v : w.value) v = static_cast<T>(he(rng));
  params.push_back(std::move(w));
  params.push_back({b.name + ".bias", {b.out_channels}, b.level, std::vector<T>(b.out_channels, T{0})});
  if (b.normalized) {
    params.push_back({b.name + ".gn.gamma", {b.out_channels}, b.level, std::vector<T>(b.out_channels, T{1})});
    params.push_back({b.name + ".gn.beta", {b.out_channels}, b.level, std::vector<T>(b.out_channels, T{0})});
  }
}

inline std::uint64_t level_stream(Level l) { return 0x100 + static_cast<std::uint64_t>(l); }

template <typename T>
std::vector<Parameter<T>> init_level(const NetworkConfig& c, Level level, Rng& rng) {
  std::vector<Parameter<T>> out;
  const Topology topo = make_topology(c);
  for (const auto* b : topo.blocks())
    if (b->level == level) init_block(out, *b, rng, b->level == Level::head ? c.head_init_gain : 1.0);
  return out;
}

}  // namespace detail

// He fan-in initialization; each level draws from its own seeded stream so
// re-initializing one level never perturbs another.
template <typename T = float>
NetworkState<T> build(const NetworkConfig& config) {
  config.validate();
  NetworkState<T> s;
  s.config = config;
  for (Level l : {Level::level0, Level::level1, Level::head}) {
    Rng rng = make_rng(config.init_seed, {detail::level_stream(l)});
    auto p = detail::init_level<T>(config, l, rng);
    for (auto& q : p) s.parameters.push_back(std::move(q));
  }
  return s;
}

// Draws fresh values for every parameter of `level`; `salt` selects the stream.
template <typename T>
void reinitialize_level(NetworkState<T>& s, Level level, std::uint64_t salt) {
  Rng rng = make_rng(s.config.init_seed, {detail::level_stream(level), salt});
  auto fresh = detail::init_level<T>(s.config, level, rng);
  std::size_t k = 0;
  for (auto& p : s.parameters) {
    if (p.level != level) continue;
    p = std::move(fresh.at(k++));
  }
}

// Replaces the output layer with a freshly initialized one for
// `new_num_classes`; all other parameters are left untouched.
template <typename T>
NetworkState<T> swap_head(const NetworkState<T>& s, int new_num_classes) {
  if (new_num_classes < 2) throw ConfigError("swap_head: new class count must be >= 2");
  NetworkState<T> out;
  out.config = s.config;
  out.config.num_classes = new_num_classes;
  out.frozen_levels = s.frozen_levels;
  out.head_generation = s.head_generation + 1;
  for (const auto& p : s.parameters)
    if (p.level != Level::head) out.parameters.push_back(p);
  Rng rng = make_rng(out.config.init_seed, {detail::level_stream(Level::head), out.head_generation});
  auto head = detail::init_level<T>(out.config, Level::head, rng);
  for (auto& p : head) out.parameters.push_back(std::move(p));
  return out;
}

template <typename T>
NetworkState<T> set_frozen(const NetworkState<T>& s, const LevelSet& levels) {
  NetworkState<T> out = s;
  out.frozen_levels = levels;
  return out;
}

template <typename T>
NetworkState<T> set_frozen(const NetworkState<T>& s, const std::vector<std::string>& levels) {
  return set_frozen(s, parse_levels(levels));
}

// ------------------------------------------------------------------ forward

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct BlockTrace {
  Tensor<T> input;
  GroupNormCache<T> norm;
  Tensor<T> activated;
  std::vector<T> dropout_mask;
};

template <typename T>
struct ForwardTrace {
  std::map<std::string, BlockTrace<T>> blocks;
  std::vector<std::uint32_t> pool_entry0, pool_inner0, pool_entry1;
  Shape3 level0_shape{};
  Shape3 input_shape{};
  Tensor<T> probs;
};

namespace detail {

struct ParamRefs {
  int weight = -1, bias = -1, gamma = -1, beta = -1;
};

template <typename T>
ParamRefs refs(const NetworkState<T>& s, const BlockSpec& b) {
  ParamRefs r;
  for (std::size_t i = 0; i < s.parameters.size(); ++i) {
    const auto& n = s.parameters[i].name;
    if (n == b.name + ".weight") r.weight = static_cast<int>(i);
    else if (n == b.name + ".bias") r.bias = static_cast<int>(i);
    else if (n == b.name + ".gn.gamma") r.gamma = static_cast<int>(i);
    else if (n == b.name + ".gn.beta") r.beta = static_cast<int>(i);
  }
  if (r.weight < 0 || r.bias < 0 || (b.normalized && (r.gamma < 0 || r.beta < 0))) {
    throw ContractError("network state is missing parameters for block " + b.name);
  }
  return r;
}

template <typename T>
std::span<const T> view(const NetworkState<T>& s, int idx) {
  return {s.parameters[static_cast<std::size_t>(idx)].value.data(), s.parameters[static_cast<std::size_t>(idx)].value.size()};
}

template <typename T>
Tensor<T> block_forward(const NetworkState<T>& s, const BlockSpec& b, Tensor<T> in, const ForwardOptions& opt,
                        Rng& dropout_rng, ForwardTrace<T>* trace) {
  const ParamRefs r = refs(s, b);
  Tensor<T> y = conv3d_forward<T>(in, view(s, r.weight), view(s, r.bias), b.out_channels, b.kernel);
  if (!b.normalized) {
    if (trace) trace->blocks[b.name].input = std::move(in);
    return y;
  }
  GroupNormCache<T> norm;
  y = group_norm_forward<T>(y, view(s, r.gamma), view(s, r.beta), s.config.groupnorm_groups, norm);
  relu_inplace(y);
  std::vector<T> mask;
  Tensor<T> activated;
  if (trace) activated = y;
  if (opt.training && s.config.dropout_rate > 0.0) dropout_inplace(y, s.config.dropout_rate, dropout_rng, mask);
  if (trace) {
    auto& bt = trace->blocks[b.name];
    bt.input = std::move(in);
    bt.norm = std::move(norm);
    bt.activated = std::move(activated);
    bt.dropout_mask = std::move(mask);
  }
  return y;
}

template <typename T>
Tensor<T> block_backward(const NetworkState<T>& s, const BlockSpec& b, const ForwardTrace<T>& trace, Tensor<T> grad,
                         Gradients<T>& grads, bool need_input_grad) {
  const ParamRefs r = refs(s, b);
  const auto& bt = trace.blocks.at(b.name);
  const bool need_param = !s.is_frozen(b.level);
  auto gspan = [&](int idx) {
    auto& g = grads[static_cast<std::size_t>(idx)];
    return std::span<T>(g.data(), g.size());
  };
  if (b.normalized) {
    dropout_backward_inplace(bt.dropout_mask, grad);
    relu_backward_inplace(bt.activated, grad);
    grad = group_norm_backward<T>(bt.norm, view(s, r.gamma), grad, s.config.groupnorm_groups, gspan(r.gamma),
                                  gspan(r.beta), need_param);
  }
  return conv3d_backward<T>(bt.input, view(s, r.weight), grad, b.kernel, gspan(r.weight), gspan(r.bias), need_param,
                            need_input_grad);
}

}  // namespace detail

// Runs the network on a single-channel input tensor; fills `trace` (when
// given) with what backward() needs.
template <typename T>
Tensor<T> forward_tensor(const NetworkState<T>& s, const Tensor<T>& x, const ForwardOptions& opt = {},
                         ForwardTrace<T>* trace = nullptr) {
  const NetworkConfig& c = s.config;
  if (x.channels() != 1 || !(x.shape() == c.input_shape)) {
    throw ContractError("forward: input shape " + lodseg::to_string(x.shape()) + " does not match network input " +
                        lodseg::to_string(c.input_shape));
  }
  const Topology t = make_topology(c);
  Rng drop = make_rng(opt.dropout_seed, {0xd20u});
  const int p = c.level0_entry_pool, d = c.level0_inner_reduction;
  std::vector<std::uint32_t> am_p0, am_d, am_p1;

  // level 0
  Tensor<T> x0 = max_pool_forward(x, p, am_p0);
  Tensor<T> s0 = detail::block_forward(s, t.entry0, std::move(x0), opt, drop, trace);
  for (const auto& b : t.enc0) s0 = detail::block_forward(s, b, std::move(s0), opt, drop, trace);
  Tensor<T> d0 = max_pool_forward(s0, d, am_d);
  Tensor<T> b0 = detail::block_forward(s, t.bottom0, std::move(d0), opt, drop, trace);
  Tensor<T> f0 = upsample_forward(b0, d);
  f0 += s0;

  // level 1
  Tensor<T> s1 = detail::block_forward(s, t.entry1, x, opt, drop, trace);
  Tensor<T> q = max_pool_forward(s1, p, am_p1);
  q += f0;
  Tensor<T> h = std::move(q);
  for (const auto& b : t.mid1) h = detail::block_forward(s, b, std::move(h), opt, drop, trace);
  Tensor<T> u = upsample_forward(h, p);
  Tensor<T> g = detail::block_forward(s, t.dec1, std::move(u), opt, drop, trace);
  g += s1;
  Tensor<T> logits = detail::block_forward(s, t.head, std::move(g), opt, drop, trace);
  Tensor<T> probs = softmax_forward(logits);

  if (trace) {
    trace->pool_entry0 = std::move(am_p0);
    trace->pool_inner0 = std::move(am_d);
    trace->pool_entry1 = std::move(am_p1);
    trace->level0_shape = s0.shape();
    trace->input_shape = x.shape();
    trace->probs = probs;
  }
  return probs;
}

// Accumulates parameter gradients of the loss given dL/dprobs. Parameters of
// frozen levels receive no gradient; gradients still flow through them.
template <typename T>
void backward(const NetworkState<T>& s, const ForwardTrace<T>& trace, const Tensor<T>& grad_probs,
              Gradients<T>& grads) {
  const NetworkConfig& c = s.config;
  const Topology t = make_topology(c);
  const int p = c.level0_entry_pool, d = c.level0_inner_reduction;
  if (grads.size() != s.parameters.size()) grads = zero_gradients(s);

  Tensor<T> dlogits = softmax_backward(trace.probs, grad_probs);
  Tensor<T> dg = detail::block_backward(s, t.head, trace, std::move(dlogits), grads, true);
  Tensor<T> ds1 = dg;  // skip join
  Tensor<T> du = detail::block_backward(s, t.dec1, trace, std::move(dg), grads, true);
  Tensor<T> dh = upsample_backward(du, p);
  for (auto it = t.mid1.rbegin(); it != t.mid1.rend(); ++it)
    dh = detail::block_backward(s, *it, trace, std::move(dh), grads, true);
  // dh is now dL/dq; q = maxpool(s1) + f0
  ds1 += max_pool_backward(dh, trace.pool_entry1, trace.input_shape);
  if (!s.is_frozen(Level::level1))
    detail::block_backward(s, t.entry1, trace, std::move(ds1), grads, false);

  if (s.is_frozen(Level::level0)) return;  // nothing trainable upstream of level 0
  Tensor<T> ds0 = dh;                        // f0 = up(b0) + s0
  Tensor<T> db0 = upsample_backward(dh, d);
  Tensor<T> dd0 = detail::block_backward(s, t.bottom0, trace, std::move(db0), grads, true);
  ds0 += max_pool_backward(dd0, trace.pool_inner0, trace.level0_shape);
  for (auto it = t.enc0.rbegin(); it != t.enc0.rend(); ++it)
    ds0 = detail::block_backward(s, *it, trace, std::move(ds0), grads, true);
  detail::block_backward(s, t.entry0, trace, std::move(ds0), grads, false);
}

// Output of forward(): per-voxel class probabilities, logically (X,Y,Z,C).
struct SegmentationOutput {
  Tensor<float> probs;
  Affine affine = Affine::Identity();

  int num_classes() const { return probs.channels(); }
  float at(int x, int y, int z, int c) const { return probs.at(c, x, y, z); }
};

inline Tensor<float> to_input_tensor(const Volume& v) {
  Tensor<float> x(1, v.shape);
  std::copy(v.data.begin(), v.data.end(), x.values().begin());
  return x;
}

// Inference-mode forward (dropout disabled): deterministic for a given state.
inline SegmentationOutput forward(const Network& s, const Volume& v) {
  if (!(v.shape == s.config.input_shape)) {
    throw ContractError("forward: volume shape " + lodseg::to_string(v.shape) + " does not match network input " +
                        lodseg::to_string(s.config.input_shape));
  }
  SegmentationOutput out;
  out.probs = forward_tensor<float>(s, to_input_tensor(v));
  out.affine = v.affine;
  return out;
}

}  // namespace lodseg::nn

#endif  // LODSEG_NN_LOD_NET_HPP
