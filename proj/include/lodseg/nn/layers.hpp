#ifndef LODSEG_NN_LAYERS_HPP
#define LODSEG_NN_LAYERS_HPP

// Forward/backward kernels for the 3D layers used by the LOD network.
// Tensors are channels-first; every kernel works on a single sample.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/core/tensor.hpp"

namespace lodseg::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

// ---------------------------------------------------------------- convolution

namespace detail {

// Upper bound on im2col scratch (elements); convolutions are evaluated in
// z-slabs that respect it.
inline constexpr std::size_t kColumnBudget = std::size_t{1} << 24;

inline int slab_depth(Shape3 s, int rows) {
  const std::size_t per_slice = static_cast<std::size_t>(s.x) * s.y * static_cast<std::size_t>(rows);
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_slice, 1), 1, s.z));
}

// col[(ci * K^3 + kk), voxel-in-slab] for output slices [z0, z1).
template <typename T>
void im2col(const Tensor<T>& in, int k, int z0, int z1, std::vector<T>& col) {
  const Shape3 s = in.shape();
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  const std::size_t cols = plane * static_cast<std::size_t>(z1 - z0);
  const int taps = k * k * k;
  col.assign(static_cast<std::size_t>(in.channels()) * taps * cols, T{0});
  for (int ci = 0; ci < in.channels(); ++ci) {
    const T* src = in.channel(ci).data();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* row = col.data() + (static_cast<std::size_t>(ci) * taps + (kz * k + ky) * k + kx) * cols;
          const int ox = kx - pad, oy = ky - pad, oz = kz - pad;
          const int x_lo = std::max(0, -ox), x_hi = std::min(s.x, s.x - ox);
          for (int z = z0; z < z1; ++z) {
            const int zz = z + oz;
            if (zz < 0 || zz >= s.z) continue;
            for (int y = 0; y < s.y; ++y) {
              const int yy = y + oy;
              if (yy < 0 || yy >= s.y) continue;
              T* dst = row + (static_cast<std::size_t>(z - z0) * s.y + y) * s.x;
              const T* line = src + (static_cast<std::size_t>(zz) * s.y + yy) * s.x;
              for (int x = x_lo; x < x_hi; ++x) dst[x] = line[x + ox];
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, int k, int z0, int z1, Tensor<T>& grad_in) {
  const Shape3 s = grad_in.shape();
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  const std::size_t cols = plane * static_cast<std::size_t>(z1 - z0);
  const int taps = k * k * k;
  for (int ci = 0; ci < grad_in.channels(); ++ci) {
    T* dst_ch = grad_in.channel(ci).data();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* row = col.data() + (static_cast<std::size_t>(ci) * taps + (kz * k + ky) * k + kx) * cols;
          const int ox = kx - pad, oy = ky - pad, oz = kz - pad;
          const int x_lo = std::max(0, -ox), x_hi = std::min(s.x, s.x - ox);
          for (int z = z0; z < z1; ++z) {
            const int zz = z + oz;
            if (zz < 0 || zz >= s.z) continue;
            for (int y = 0; y < s.y; ++y) {
              const int yy = y + oy;
              if (yy < 0 || yy >= s.y) continue;
              const T* src = row + (static_cast<std::size_t>(z - z0) * s.y + y) * s.x;
              T* line = dst_ch + (static_cast<std::size_t>(zz) * s.y + yy) * s.x;
              for (int x = x_lo; x < x_hi; ++x) line[x + ox] += src[x];
            }
          }
        }
  }
}

}  // namespace detail

// "Same" 3D convolution with odd cubic kernel `k` and stride 1.
// weight: cout x (cin * k^3), row-major; bias: cout.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int cout,
                         int k) {
  const int cin = in.channels();
  const int rows = cin * k * k * k;
  lodseg::detail::require<ContractError>(weight.size() == static_cast<std::size_t>(cout) * rows,
                                 "conv3d: weight size does not match channels");
  const Shape3 s = in.shape();
  const std::size_t n = s.voxels();
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  Tensor<T> out(cout, s);
  Eigen::Map<const RowMatrix<T>> w(weight.data(), cout, rows);
  MatrixMap<T> out_all(out.data(), cout, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(n));

  if (k == 1) {
    ConstMatrixMap<T> x(in.data(), cin, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(n));
    out_all.noalias() = w * x;
  } else {
    std::vector<T> col;
    const int depth = detail::slab_depth(s, rows);
    for (int z0 = 0; z0 < s.z; z0 += depth) {
      const int z1 = std::min(s.z, z0 + depth);
      const auto cols = static_cast<Eigen::Index>(plane * (z1 - z0));
      detail::im2col(in, k, z0, z1, col);
      Eigen::Map<const RowMatrix<T>> c(col.data(), rows, cols);
      MatrixMap<T> o(out.data() + plane * z0, cout, cols, Eigen::OuterStride<>(n));
      o.noalias() = w * c;
    }
  }
  for (int co = 0; co < cout; ++co) {
    auto ch = out.channel(co);
    const T b = bias[static_cast<std::size_t>(co)];
    for (auto& v : ch) v += b;
  }
  return out;
}

// Accumulates weight/bias gradients; returns the input gradient when
// `need_input_grad` (else an empty tensor).
template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out, int k,
                          std::span<T> grad_weight, std::span<T> grad_bias, bool need_param_grad,
                          bool need_input_grad) {
  const int cin = in.channels();
  const int cout = grad_out.channels();
  const int rows = cin * k * k * k;
  const Shape3 s = in.shape();
  const std::size_t n = s.voxels();
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  Eigen::Map<const RowMatrix<T>> w(weight.data(), cout, rows);
  Eigen::Map<RowMatrix<T>> gw(grad_weight.data(), cout, rows);

  if (need_param_grad) {
    for (int co = 0; co < cout; ++co) {
      T acc = T{0};
      for (auto v : grad_out.channel(co)) acc += v;
      grad_bias[static_cast<std::size_t>(co)] += acc;
    }
  }
  Tensor<T> grad_in;
  if (need_input_grad) grad_in = Tensor<T>(cin, s, T{0});
  if (!need_param_grad && !need_input_grad) return grad_in;

  if (k == 1) {
    ConstMatrixMap<T> x(in.data(), cin, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(n));
    ConstMatrixMap<T> g(grad_out.data(), cout, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(n));
    if (need_param_grad) gw.noalias() += g * x.transpose();
    if (need_input_grad) {
      MatrixMap<T> gi(grad_in.data(), cin, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(n));
      gi.noalias() = w.transpose() * g;
    }
    return grad_in;
  }

  std::vector<T> col;
  std::vector<T> dcol;
  const int depth = detail::slab_depth(s, rows);
  for (int z0 = 0; z0 < s.z; z0 += depth) {
    const int z1 = std::min(s.z, z0 + depth);
    const auto cols = static_cast<Eigen::Index>(plane * (z1 - z0));
    ConstMatrixMap<T> g(grad_out.data() + plane * z0, cout, cols, Eigen::OuterStride<>(n));
    if (need_param_grad) {
      detail::im2col(in, k, z0, z1, col);
      Eigen::Map<const RowMatrix<T>> c(col.data(), rows, cols);
      gw.noalias() += g * c.transpose();
    }
    if (need_input_grad) {
      dcol.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
      Eigen::Map<RowMatrix<T>> dc(dcol.data(), rows, cols);
      dc.noalias() = w.transpose() * g;
      detail::col2im_add(dcol, k, z0, z1, grad_in);
    }
  }
  return grad_in;
}

// ------------------------------------------------------------ group normalization

template <typename T>
struct GroupNormCache {
  Tensor<T> normalized;         // x_hat
  std::vector<double> inv_std;  // per group
};

inline constexpr double kGroupNormEps = 1e-5;

template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta, int groups,
                             GroupNormCache<T>& cache) {
  const int c = x.channels();
  lodseg::detail::require<ContractError>(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
  const int per = c / groups;
  const std::size_t n = x.voxels();
  cache.normalized = Tensor<T>(c, x.shape());
  cache.inv_std.assign(static_cast<std::size_t>(groups), 0.0);
  Tensor<T> y(c, x.shape());
  const double m = static_cast<double>(per) * static_cast<double>(n);
  for (int g = 0; g < groups; ++g) {
    double sum = 0.0;
    for (int ch = g * per; ch < (g + 1) * per; ++ch)
      for (auto v : x.channel(ch)) sum += static_cast<double>(v);
    const double mean = sum / m;
    double sq = 0.0;
    for (int ch = g * per; ch < (g + 1) * per; ++ch)
      for (auto v : x.channel(ch)) {
        const double d = static_cast<double>(v) - mean;
        sq += d * d;
      }
    const double inv = 1.0 / std::sqrt(sq / m + kGroupNormEps);
    cache.inv_std[static_cast<std::size_t>(g)] = inv;
    for (int ch = g * per; ch < (g + 1) * per; ++ch) {
      auto src = x.channel(ch);
      auto xh = cache.normalized.channel(ch);
      auto dst = y.channel(ch);
      const T ga = gamma[static_cast<std::size_t>(ch)];
      const T be = beta[static_cast<std::size_t>(ch)];
      for (std::size_t i = 0; i < n; ++i) {
        const T h = static_cast<T>((static_cast<double>(src[i]) - mean) * inv);
        xh[i] = h;
        dst[i] = h * ga + be;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> group_norm_backward(const GroupNormCache<T>& cache, std::span<const T> gamma, const Tensor<T>& grad_out,
                              int groups, std::span<T> grad_gamma, std::span<T> grad_beta, bool need_param_grad) {
  const int c = grad_out.channels();
  const int per = c / groups;
  const std::size_t n = grad_out.voxels();
  const double m = static_cast<double>(per) * static_cast<double>(n);
  Tensor<T> grad_in(c, grad_out.shape());
  for (int g = 0; g < groups; ++g) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (int ch = g * per; ch < (g + 1) * per; ++ch) {
      auto dy = grad_out.channel(ch);
      auto xh = cache.normalized.channel(ch);
      const double ga = gamma[static_cast<std::size_t>(ch)];
      double dg = 0.0, db = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = dy[i];
        dg += d * xh[i];
        db += d;
        sum_dxh += d * ga;
        sum_dxh_xh += d * ga * xh[i];
      }
      if (need_param_grad) {
        grad_gamma[static_cast<std::size_t>(ch)] += static_cast<T>(dg);
        grad_beta[static_cast<std::size_t>(ch)] += static_cast<T>(db);
      }
    }
    const double inv = cache.inv_std[static_cast<std::size_t>(g)];
    const double a = sum_dxh / m;
    const double b = sum_dxh_xh / m;
    for (int ch = g * per; ch < (g + 1) * per; ++ch) {
      auto dy = grad_out.channel(ch);
      auto xh = cache.normalized.channel(ch);
      auto dx = grad_in.channel(ch);
      const double ga = gamma[static_cast<std::size_t>(ch)];
      for (std::size_t i = 0; i < n; ++i) {
        dx[i] = static_cast<T>(inv * (dy[i] * ga - a - xh[i] * b));
      }
    }
  }
  return grad_in;
}

// ------------------------------------------------------------ activation / dropout

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

// `activated` is the ReLU output; its positive entries mark the pass-through.
template <typename T>
void relu_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad) {
  auto& g = grad.values();
  const auto& a = activated.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(a[i] > T{0})) g[i] = T{0};
}

// Inverted dropout. The mask stores the multiplier (0 or 1/(1-p)).
template <typename T>
void dropout_inplace(Tensor<T>& x, double rate, Rng& rng, std::vector<T>& mask) {
  mask.assign(x.size(), T{1});
  if (rate <= 0.0) return;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto& v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = u(rng) < rate ? T{0} : keep_scale;
    v[i] *= mask[i];
  }
}

template <typename T>
void dropout_backward_inplace(const std::vector<T>& mask, Tensor<T>& grad) {
  if (mask.empty()) return;
  auto& g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
}

// ------------------------------------------------------------ pooling / upsampling

// Non-overlapping max pool by factor f. `argmax` receives the source voxel
// index (within the channel) of each output.
template <typename T>
Tensor<T> max_pool_forward(const Tensor<T>& x, int f, std::vector<std::uint32_t>& argmax) {
  const Shape3 s = x.shape();
  lodseg::detail::require<ContractError>(s.x % f == 0 && s.y % f == 0 && s.z % f == 0,
                                 "max_pool: extent " + to_string(s) + " not divisible by " + std::to_string(f));
  const Shape3 o = s.divided(f);
  Tensor<T> out(x.channels(), o);
  argmax.assign(out.size(), 0);
  for (int c = 0; c < x.channels(); ++c) {
    const T* src = x.channel(c).data();
    T* dst = out.channel(c).data();
    std::uint32_t* am = argmax.data() + static_cast<std::size_t>(c) * o.voxels();
    for (int k = 0; k < o.z; ++k)
      for (int j = 0; j < o.y; ++j)
        for (int i = 0; i < o.x; ++i) {
          std::size_t best_idx = s.index(i * f, j * f, k * f);
          T best = src[best_idx];
          for (int dz = 0; dz < f; ++dz)
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx) {
                const std::size_t idx = s.index(i * f + dx, j * f + dy, k * f + dz);
                if (src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                }
              }
          const std::size_t oi = o.index(i, j, k);
          dst[oi] = best;
          am[oi] = static_cast<std::uint32_t>(best_idx);
        }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax, Shape3 in_shape) {
  Tensor<T> grad_in(grad_out.channels(), in_shape, T{0});
  const std::size_t no = grad_out.voxels();
  for (int c = 0; c < grad_out.channels(); ++c) {
    const T* g = grad_out.channel(c).data();
    T* dst = grad_in.channel(c).data();
    const std::uint32_t* am = argmax.data() + static_cast<std::size_t>(c) * no;
    for (std::size_t i = 0; i < no; ++i) dst[am[i]] += g[i];
  }
  return grad_in;
}

// Nearest-neighbour upsampling by integer factor f.
template <typename T>
Tensor<T> upsample_forward(const Tensor<T>& x, int f) {
  const Shape3 s = x.shape();
  const Shape3 o = s.scaled(f);
  Tensor<T> out(x.channels(), o);
  for (int c = 0; c < x.channels(); ++c) {
    const T* src = x.channel(c).data();
    T* dst = out.channel(c).data();
    for (int k = 0; k < o.z; ++k)
      for (int j = 0; j < o.y; ++j) {
        const T* line = src + s.index(0, j / f, k / f);
        T* row = dst + o.index(0, j, k);
        for (int i = 0; i < o.x; ++i) row[i] = line[i / f];
      }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, int f) {
  const Shape3 o = grad_out.shape();
  const Shape3 s = o.divided(f);
  Tensor<T> grad_in(grad_out.channels(), s, T{0});
  for (int c = 0; c < grad_out.channels(); ++c) {
    const T* g = grad_out.channel(c).data();
    T* dst = grad_in.channel(c).data();
    for (int k = 0; k < o.z; ++k)
      for (int j = 0; j < o.y; ++j) {
        T* line = dst + s.index(0, j / f, k / f);
        const T* row = g + o.index(0, j, k);
        for (int i = 0; i < o.x; ++i) line[i / f] += row[i];
      }
  }
  return grad_in;
}

// ------------------------------------------------------------ softmax

// Channel-wise softmax per voxel (max-subtracted).
template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& logits) {
  const int c = logits.channels();
  const std::size_t n = logits.voxels();
  Tensor<T> out(c, logits.shape());
  const T* z = logits.data();
  T* p = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    T mx = z[i];
    for (int ch = 1; ch < c; ++ch) mx = std::max(mx, z[ch * n + i]);
    double sum = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double e = std::exp(static_cast<double>(z[ch * n + i] - mx));
      p[ch * n + i] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int ch = 0; ch < c; ++ch) p[ch * n + i] = static_cast<T>(p[ch * n + i] * inv);
  }
  return out;
}

// dz_c = p_c * (g_c - sum_k p_k g_k)
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  const int c = probs.channels();
  const std::size_t n = probs.voxels();
  Tensor<T> out(c, probs.shape());
  const T* p = probs.data();
  const T* g = grad_probs.data();
  T* d = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int ch = 0; ch < c; ++ch) dot += static_cast<double>(p[ch * n + i]) * g[ch * n + i];
    for (int ch = 0; ch < c; ++ch) d[ch * n + i] = static_cast<T>(p[ch * n + i] * (g[ch * n + i] - dot));
  }
  return out;
}

}  // namespace lodseg::nn

#endif  // LODSEG_NN_LAYERS_HPP
