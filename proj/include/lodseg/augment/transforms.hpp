#ifndef LODSEG_AUGMENT_TRANSFORMS_HPP
#define LODSEG_AUGMENT_TRANSFORMS_HPP

// Geometric and intensity transforms with resolved parameters.
//
// Geometric (image: linear, labels: nearest, zero / background fill):
//   translation      shift_x/y/z voxels
//   rotation         deg_x/y/z about the grid center (Rz*Ry*Rx)
//   grid_distortion  per axis, steps+1 cell factors in [1-d, 1+d]; cell j of
//                    the output is mapped onto a stretched source interval
//   Consecutive geometric transforms in a plan are composed and resampled once.
//
// Intensity (input in [0,1], output clipped to [0,1]):
//   blur             box filter of odd width ksize, edge-clamped
//   salt_pepper      each voxel corrupted with p=amount; salt (1) with p=salt
//   gaussian         additive N(0, std)
//   downscale        linear resample to round(n*scale) per axis and back
//   gamma            v^gamma, then clip to the [clip, 1-clip] quantiles and rescale
//   contrast         (v - mean) * alpha + mean
//   ghosting         k-space planes along `axis` spaced by `repetitions`
//                    scaled by (1 - intensity); the central `restore`
//                    fraction is kept
//   slice_spacing    axial (third axis) slices kept every `spacing` mm and
//                    linearly re-interpolated
//   inhomogeneity    exp(sum of monomials up to `order`) on [-1,1]^3, with
//                    coefficients uniform in +-coefficient
//   field_bias       scale_factor^(0.5 * mean_a cos(2 pi c_a u_a + phi_a)),
//                    c_a uniform in [0, cycles]

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "lodseg/augment/spec.hpp"
#include "lodseg/core/fft.hpp"
#include "lodseg/volume/conform.hpp"
#include "lodseg/volume/resample.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg::augment {

namespace detail {

inline void clip01(std::vector<float>& d) {
  for (auto& v : d) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
}

inline double param(const PlannedTransform& t, const char* key) {
  const auto it = t.params.find(key);
  if (it == t.params.end()) throw ConfigError("augmentation " + t.name + ": missing parameter " + key);
  return it->second;
}

// Source coordinate for each output index along one axis.
inline std::vector<double> distortion_axis(int n, int steps, double distortion, Rng& rng) {
  std::vector<double> factors(static_cast<std::size_t>(steps) + 1);
  for (auto& f : factors) f = uniform(rng, 1.0 - distortion, 1.0 + distortion);
  std::vector<double> xs(static_cast<std::size_t>(n));
  const int step = std::max(1, n / steps);
  double prev = 0.0;
  for (int idx = 0; idx <= steps; ++idx) {
    const int start = idx * step;
    if (start >= n) break;
    const int end = (idx == steps) ? n : std::min(start + step, n);
    const double cur = prev + step * factors[static_cast<std::size_t>(idx)];
    const int len = end - start;
    for (int i = 0; i < len; ++i)
      xs[static_cast<std::size_t>(start + i)] = len > 1 ? prev + (cur - prev) * i / (len - 1) : prev;
    prev = cur;
  }
  return xs;
}

// Separable linear resampling of one axis; `coords[i]` is the (clamped)
// source coordinate of output index i.
inline std::vector<float> resample_axis(const std::vector<float>& src, Shape3 in, int axis,
                                        const std::vector<double>& coords) {
  Shape3 out = in;
  out[axis] = static_cast<int>(coords.size());
  std::vector<float> dst(out.voxels());
  const int n_in = in[axis];
  for (int k = 0; k < out.z; ++k)
    for (int j = 0; j < out.y; ++j)
      for (int i = 0; i < out.x; ++i) {
        int idx[3] = {i, j, k};
        const double c = std::clamp(coords[static_cast<std::size_t>(idx[axis])], 0.0, static_cast<double>(n_in - 1));
        const int lo = std::min(static_cast<int>(std::floor(c)), n_in - 1);
        const int hi = std::min(lo + 1, n_in - 1);
        const double w = c - lo;
        idx[axis] = lo;
        const double a = src[in.index(idx[0], idx[1], idx[2])];
        idx[axis] = hi;
        const double b = src[in.index(idx[0], idx[1], idx[2])];
        dst[out.index(i, j, k)] = static_cast<float>(a + (b - a) * w);
      }
  return dst;
}

}  // namespace detail

// Downscale then upscale back, the grid centers aligned. Exposed for tests.
inline std::vector<float> down_up(const std::vector<float>& src, Shape3 s, double scale) {
  std::vector<float> cur = src;
  Shape3 shape = s;
  for (int a = 0; a < 3; ++a) {
    const int n = s[a];
    const int m = std::max(1, static_cast<int>(std::lround(n * scale)));
    std::vector<double> c(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) c[static_cast<std::size_t>(i)] = (i + 0.5) * n / m - 0.5;
    cur = detail::resample_axis(cur, shape, a, c);
    shape[a] = m;
  }
  for (int a = 0; a < 3; ++a) {
    const int n = s[a];
    const int m = shape[a];
    std::vector<double> c(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = (i + 0.5) * m / n - 0.5;
    cur = detail::resample_axis(cur, shape, a, c);
    shape[a] = n;
  }
  return cur;
}

struct GeometricResult {
  Volume image;
  std::optional<LabelMap> labels;
};

namespace detail {

using CoordMap = std::function<Eigen::Vector3d(const Eigen::Vector3d&)>;

// Output -> source index mapping of one geometric transform.
inline CoordMap coordinate_map(const PlannedTransform& t, Shape3 s) {
  check_params(t.name, t.params);
  if (group_of(t.name) != Group::geometric) throw ConfigError(t.name + " is not a geometric transform");
  if (t.name == "translation" || t.name == "rotation") {
    Eigen::Matrix4d m;
    if (t.name == "translation") {
      m = rigid_about_center(s, {param(t, "shift_x"), param(t, "shift_y"), param(t, "shift_z")},
                             Eigen::Vector3d::Zero());
    } else {
      m = rigid_about_center(s, Eigen::Vector3d::Zero(), {param(t, "deg_x"), param(t, "deg_y"), param(t, "deg_z")});
    }
    return [m](const Eigen::Vector3d& p) { return (m * p.homogeneous()).head<3>().eval(); };
  }
  Rng rng(t.seed);
  const int steps = static_cast<int>(param(t, "steps"));
  const double d = param(t, "distortion");
  std::array<std::vector<double>, 3> axes;
  for (int a = 0; a < 3; ++a) axes[static_cast<std::size_t>(a)] = distortion_axis(s[a], steps, d, rng);
  return [axes, s](const Eigen::Vector3d& p) {
    Eigen::Vector3d q;
    for (int a = 0; a < 3; ++a) {
      const auto& xs = axes[static_cast<std::size_t>(a)];
      const int n = s[a];
      const double c = p[a];
      if (c < -lodseg::detail::kSnap || c > n - 1 + lodseg::detail::kSnap) {
        q[a] = -1e9;  // outside the grid: zero / background fill
        continue;
      }
      const double cc = std::clamp(c, 0.0, static_cast<double>(n - 1));
      const int lo = std::min(static_cast<int>(std::floor(cc)), n - 1);
      const int hi = std::min(lo + 1, n - 1);
      const double w = cc - lo;
      q[a] = xs[static_cast<std::size_t>(lo)] + (xs[static_cast<std::size_t>(hi)] - xs[static_cast<std::size_t>(lo)]) * w;
    }
    return q;
  };
}

// Resamples once through the composition of `maps` (applied in order, so the
// last map is evaluated first on output coordinates).
inline GeometricResult resample_composed(const Volume& v, const LabelMap* l, const std::vector<CoordMap>& maps) {
  if (l && l->shape != v.shape) throw ContractError("apply_geometric: image and label shapes differ");
  const Shape3 s = v.shape;
  auto map = [&](int i, int j, int k) {
    Eigen::Vector3d p(i, j, k);
    for (auto it = maps.rbegin(); it != maps.rend(); ++it) {
      if (it != maps.rbegin()) {
        for (int a = 0; a < 3; ++a)  // left the intermediate grid: fill
          if (p[a] < -lodseg::detail::kSnap || p[a] > s[a] - 1 + lodseg::detail::kSnap) return Eigen::Vector3d(-1e9, -1e9, -1e9);
      }
      p = (*it)(p);
    }
    return p;
  };
  GeometricResult r{v, std::nullopt};
  r.image.data = resample_mapped<float>(v.data, s, map, Interp::linear, 0.0f);
  if (l) {
    r.labels = *l;
    r.labels->data = resample_mapped<Label>(l->data, s, map, Interp::nearest, Label{0});
  }
  clip01(r.image.data);
  return r;
}

}  // namespace detail

inline GeometricResult apply_geometric(const Volume& v, const LabelMap* l, const PlannedTransform& t) {
  return detail::resample_composed(v, l, {detail::coordinate_map(t, v.shape)});
}

inline Volume apply_intensity(const Volume& v, const PlannedTransform& t) {
  check_params(t.name, t.params);
  if (group_of(t.name) == Group::geometric) throw ConfigError(t.name + " is not an intensity transform");
  const Shape3 s = v.shape;
  Volume out = v;
  auto& d = out.data;
  Rng rng(t.seed);

  if (t.name == "blur") {
    const int k = static_cast<int>(detail::param(t, "ksize"));
    if (k % 2 == 0) throw ConfigError("augmentation blur: ksize must be odd");
    const int h = k / 2;
    for (int a = 0; a < 3; ++a) {
      std::vector<float> src = d;
      for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
          for (int x = 0; x < s.x; ++x) {
            int idx[3] = {x, y, z};
            const int c = idx[a];
            double acc = 0;
            for (int o = -h; o <= h; ++o) {
              idx[a] = std::clamp(c + o, 0, s[a] - 1);
              acc += src[s.index(idx[0], idx[1], idx[2])];
            }
            d[s.index(x, y, z)] = static_cast<float>(acc / k);
          }
    }
  } else if (t.name == "salt_pepper") {
    const double amount = detail::param(t, "amount"), salt = detail::param(t, "salt");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& x : d) {
      const double a = u(rng), b = u(rng);
      if (a < amount) x = b < salt ? 1.0f : 0.0f;
    }
  } else if (t.name == "gaussian") {
    const double sd = detail::param(t, "std");
    if (sd > 0) {
      std::normal_distribution<double> n(0.0, sd);
      for (auto& x : d) x = static_cast<float>(x + n(rng));
    }
  } else if (t.name == "downscale") {
    d = down_up(v.data, s, detail::param(t, "scale"));
  } else if (t.name == "gamma") {
    const double g = detail::param(t, "gamma"), clip = detail::param(t, "clip");
    for (auto& x : d) x = static_cast<float>(std::pow(std::max(0.0f, x), g));
    const double lo = percentile(d, 100.0 * clip), hi = percentile(d, 100.0 * (1.0 - clip));
    if (hi > lo)
      for (auto& x : d) x = static_cast<float>((std::clamp(static_cast<double>(x), lo, hi) - lo) / (hi - lo));
  } else if (t.name == "contrast") {
    const double alpha = detail::param(t, "alpha");
    double mean = 0;
    for (float x : d) mean += x;
    mean /= static_cast<double>(d.size());
    for (auto& x : d) x = static_cast<float>((x - mean) * alpha + mean);
  } else if (t.name == "ghosting") {
    const int reps = static_cast<int>(detail::param(t, "repetitions"));
    const int axis = static_cast<int>(detail::param(t, "axis"));
    const double intensity = detail::param(t, "intensity"), restore = detail::param(t, "restore");
    auto spec = fft::forward(v.data, s);
    const int n = s[axis];
    const int keep = std::max(1, static_cast<int>(std::lround(restore * n)));
    const int center = n / 2;
    for (int k = 0; k < s.z; ++k)
      for (int j = 0; j < s.y; ++j)
        for (int i = 0; i < s.x; ++i) {
          const int idx[3] = {i, j, k};
          const int pos = fft::centered_position(idx[axis], n);
          if (pos % reps != 0) continue;
          if (std::abs(pos - center) <= keep / 2) continue;
          spec[s.index(i, j, k)] *= (1.0 - intensity);
        }
    auto img = fft::inverse(std::move(spec), s);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(std::abs(img[i]));
  } else if (t.name == "slice_spacing") {
    const double sp = detail::param(t, "spacing");
    const double mm = voxel_sizes(v.affine).z();
    const double step = sp / (mm > 0 ? mm : 1.0);
    std::vector<double> kept;
    for (double z = 0; z <= s.z - 1 + 1e-9; z += step) kept.push_back(z);
    Shape3 thin = s;
    auto slab = detail::resample_axis(v.data, s, 2, kept);
    thin.z = static_cast<int>(kept.size());
    std::vector<double> back(static_cast<std::size_t>(s.z));
    for (int z = 0; z < s.z; ++z) back[static_cast<std::size_t>(z)] = z / step;
    d = detail::resample_axis(slab, thin, 2, back);
  } else if (t.name == "inhomogeneity") {
    const int order = static_cast<int>(detail::param(t, "order"));
    const double cmax = detail::param(t, "coefficient");
    struct Term {
      int a, b, c;
      double w;
    };
    std::vector<Term> terms;
    for (int a = 0; a <= order; ++a)
      for (int b = 0; a + b <= order; ++b)
        for (int c = 0; a + b + c <= order; ++c) terms.push_back({a, b, c, uniform(rng, -cmax, cmax)});
    auto coord = [](int i, int n) { return n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0; };
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) {
          const double u = coord(x, s.x), w = coord(y, s.y), q = coord(z, s.z);
          double p = 0;
          for (const auto& tm : terms) p += tm.w * std::pow(u, tm.a) * std::pow(w, tm.b) * std::pow(q, tm.c);
          float& val = d[s.index(x, y, z)];
          val = static_cast<float>(val * std::exp(p));
        }
  } else if (t.name == "field_bias") {
    const double cycles = detail::param(t, "cycles"), factor = detail::param(t, "scale_factor");
    double c[3], phi[3];
    for (int a = 0; a < 3; ++a) {
      c[a] = uniform(rng, 0.0, cycles);
      phi[a] = uniform(rng, 0.0, 2.0 * M_PI);
    }
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) {
          const double u[3] = {static_cast<double>(x) / s.x, static_cast<double>(y) / s.y, static_cast<double>(z) / s.z};
          double m = 0;
          for (int a = 0; a < 3; ++a) m += std::cos(2.0 * M_PI * c[a] * u[a] + phi[a]);
          float& val = d[s.index(x, y, z)];
          val = static_cast<float>(val * std::pow(factor, 0.5 * m / 3.0));
        }
  } else {
    throw ConfigError("unknown intensity transform \"" + t.name + "\"");
  }
  detail::clip01(d);
  return out;
}

struct AugmentedSample {
  Volume image;
  std::optional<LabelMap> labels;
};

// Applies a plan in order. Consecutive geometric transforms are composed and
// resampled once; labels only follow geometric transforms.
inline AugmentedSample apply_plan(const Volume& v, const LabelMap* l, const Plan& plan) {
  AugmentedSample s{v, l ? std::optional<LabelMap>(*l) : std::nullopt};
  std::vector<detail::CoordMap> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    auto r = detail::resample_composed(s.image, s.labels ? &*s.labels : nullptr, pending);
    s.image = std::move(r.image);
    if (r.labels) s.labels = std::move(r.labels);
    pending.clear();
  };
  for (const auto& t : plan) {
    if (t.group == Group::geometric) {
      pending.push_back(detail::coordinate_map(t, v.shape));
    } else {
      flush();
      s.image = apply_intensity(s.image, t);
    }
  }
  flush();
  return s;
}

}  // namespace lodseg::augment

#endif  // LODSEG_AUGMENT_TRANSFORMS_HPP
