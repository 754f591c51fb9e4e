#ifndef LODSEG_VOLUME_CONFORM_HPP
#define LODSEG_VOLUME_CONFORM_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/core/tensor.hpp"
#include "lodseg/volume/resample.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg {

struct ConformOptions {
  double target_mm = 1.0;
  Shape3 target_shape = Shape3::cube(256);
  Interp interp = Interp::linear;
};

// Target geometry: RAS+ axis-aligned grid with isotropic spacing whose center
// coincides with the world center of the input grid. Crop/pad is implied by
// the fixed output extent; anything outside the input reads as zero.
inline Affine conformed_affine(const Affine& in_affine, Shape3 in_shape, double target_mm, Shape3 target_shape) {
  validate_affine(in_affine);
  if (!(target_mm > 0.0)) throw GeometryError("target voxel size must be positive");
  if (!target_shape.positive()) throw GeometryError("target shape must be positive");
  Affine out = scaling_affine(target_mm);
  const Eigen::Vector3d center = grid_center_world(in_affine, in_shape);
  const Eigen::Vector3d half((target_shape.x - 1) / 2.0, (target_shape.y - 1) / 2.0, (target_shape.z - 1) / 2.0);
  out.block<3, 1>(0, 3) = center - target_mm * half;
  return float_representable(out);
}

namespace detail {
template <typename T>
std::vector<T> conform_data(const std::vector<T>& data, const Affine& in_affine, Shape3 in_shape,
                            const Affine& out_affine, Shape3 out_shape, Interp interp) {
  const Eigen::Matrix4d out_to_in = in_affine.inverse() * out_affine;
  return resample_affine(data, in_shape, out_to_in, out_shape, interp, T{});
}
}  // namespace detail

inline Volume conform(const Volume& v, const ConformOptions& opt = {}) {
  Affine target = conformed_affine(v.affine, v.shape, opt.target_mm, opt.target_shape);
  Volume out(opt.target_shape, target);
  out.data = detail::conform_data(v.data, v.affine, v.shape, target, opt.target_shape, opt.interp);
  return out;
}

// Label maps are always resampled nearest-neighbour.
inline LabelMap conform(const LabelMap& l, const ConformOptions& opt = {}) {
  if (opt.interp != Interp::nearest) {
    throw ContractError("label maps must be conformed with nearest interpolation");
  }
  Affine target = conformed_affine(l.affine, l.shape, opt.target_mm, opt.target_shape);
  LabelMap out(opt.target_shape, target, l.scheme);
  out.data = detail::conform_data(l.data, l.affine, l.shape, target, opt.target_shape, Interp::nearest);
  return out;
}

// Linear-interpolated percentile (numpy's default definition), q in [0,100].
inline double percentile(std::vector<float> values, double q) {
  if (values.empty()) return 0.0;
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

struct NormalizeOptions {
  double low_percentile = 0.5;
  double high_percentile = 99.5;
};

// Clip to the [p_low, p_high] percentiles, then scale linearly to [0,1].
inline Volume normalize_intensity(const Volume& v, const NormalizeOptions& opt = {}) {
  if (!all_finite(v.data)) throw SanitationError("normalize_intensity: non-finite input", 0);
  Volume out(v.shape, v.affine, 0.0f);
  const double lo = percentile(v.data, opt.low_percentile);
  const double hi = percentile(v.data, opt.high_percentile);
  if (!(hi > lo)) {
    log::warn("normalize_intensity: volume has constant intensity within the clip range; returning zeros");
    return out;
  }
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    double x = std::clamp(static_cast<double>(v.data[i]), lo, hi);
    out.data[i] = static_cast<float>((x - lo) * scale);
  }
  return out;
}

// Channel c holds 1 where the label equals c. Layout: Tensor channel c,
// logically (X, Y, Z, C).
template <typename T = float>
Tensor<T> one_hot(const LabelMap& l) {
  const int c = l.scheme.num_classes();
  Tensor<T> out(c, l.shape, T{0});
  const std::size_t n = l.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const Label v = l.data[i];
    if (v >= c) {
      throw ContractError("one_hot: label " + std::to_string(v) + " >= class count " + std::to_string(c));
    }
    out.values()[static_cast<std::size_t>(v) * n + i] = T{1};
  }
  return out;
}

// Per-voxel argmax over channels; ties go to the lowest channel index.
template <typename T>
LabelMap argmax(const Tensor<T>& probs, const Affine& affine, const ClassScheme& scheme) {
  if (probs.channels() != scheme.num_classes()) {
    throw ContractError("argmax: tensor has " + std::to_string(probs.channels()) + " channels, scheme has " +
                        std::to_string(scheme.num_classes()));
  }
  LabelMap out(probs.shape(), affine, scheme);
  const std::size_t n = probs.voxels();
  const T* p = probs.data();
  std::vector<T> best(p, p + n);
  for (int c = 1; c < probs.channels(); ++c) {
    const T* pc = p + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (pc[i] > best[i]) {
        best[i] = pc[i];
        out.data[i] = static_cast<Label>(c);
      }
    }
  }
  return out;
}

}  // namespace lodseg

#endif  // LODSEG_VOLUME_CONFORM_HPP
