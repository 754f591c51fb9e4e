#ifndef LODSEG_VOLUME_VOLUME_HPP
#define LODSEG_VOLUME_VOLUME_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/tensor.hpp"
#include "lodseg/volume/class_scheme.hpp"

namespace lodseg {

// Voxel index -> world (mm). On disk the matrix is stored in float precision.
using Affine = Eigen::Matrix4d;

inline Affine scaling_affine(double mm) {
  Affine a = Affine::Identity();
  a(0, 0) = a(1, 1) = a(2, 2) = mm;
  return a;
}

// Rounds every entry through float so the matrix survives a NIfTI round trip.
inline Affine float_representable(const Affine& a) {
  return a.cast<float>().cast<double>();
}

inline void validate_affine(const Affine& a) {
  double det = a.topLeftCorner<3, 3>().determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) throw GeometryError("degenerate affine (determinant 0)");
  if (!a.allFinite()) throw GeometryError("affine has non-finite entries");
}

inline Eigen::Vector3d voxel_sizes(const Affine& a) {
  return a.topLeftCorner<3, 3>().colwise().norm().transpose();
}

// World coordinate of the geometric center of a grid.
inline Eigen::Vector3d grid_center_world(const Affine& a, Shape3 s) {
  Eigen::Vector4d c((s.x - 1) / 2.0, (s.y - 1) / 2.0, (s.z - 1) / 2.0, 1.0);
  return (a * c).head<3>();
}

// Three-letter anatomical code of the direction each voxel axis increases
// towards, e.g. "RAS" or "LAS". Each voxel axis is assigned the world axis of
// its largest absolute component.
inline std::string orientation_code(const Affine& a) {
  static const char pos[3] = {'R', 'A', 'S'};
  static const char neg[3] = {'L', 'P', 'I'};
  std::string code(3, '?');
  std::set<int> used;
  for (int col = 0; col < 3; ++col) {
    int best = -1;
    double best_abs = -1.0;
    for (int row = 0; row < 3; ++row) {
      if (used.count(row)) continue;
      double v = std::abs(a(row, col));
      if (v > best_abs) {
        best_abs = v;
        best = row;
      }
    }
    used.insert(best);
    code[static_cast<std::size_t>(col)] = a(best, col) >= 0 ? pos[best] : neg[best];
  }
  return code;
}

template <typename T>
struct Grid {
  Shape3 shape{};
  Affine affine = Affine::Identity();
  std::vector<T> data;

  Grid() = default;
  Grid(Shape3 s, const Affine& a, T fill = T{}) : shape(s), affine(a), data(s.voxels(), fill) {}

  T& at(int i, int j, int k) { return data[shape.index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[shape.index(i, j, k)]; }
  std::size_t voxels() const { return shape.voxels(); }

  bool same_geometry(const Affine& other_affine, Shape3 other_shape) const {
    return shape == other_shape && affine.isApprox(other_affine, 1e-6);
  }
};

// Scalar image, float intensities.
struct Volume : Grid<float> {
  using Grid<float>::Grid;
};

using Label = std::uint16_t;

// Integer class map under a ClassScheme.
struct LabelMap : Grid<Label> {
  ClassScheme scheme;

  LabelMap() = default;
  LabelMap(Shape3 s, const Affine& a, ClassScheme sc, Label fill = 0)
      : Grid<Label>(s, a, fill), scheme(std::move(sc)) {}

  std::set<Label> value_set() const { return std::set<Label>(data.begin(), data.end()); }

  void validate() const {
    const auto c = static_cast<Label>(scheme.num_classes());
    for (auto v : data) {
      if (v >= c) {
        throw ContractError("label value " + std::to_string(v) + " is outside the class scheme (" +
                            std::to_string(scheme.num_classes()) + " classes)");
      }
    }
  }

  bool matches(const Volume& v) const { return same_geometry(v.affine, v.shape); }
};

inline bool all_finite(const std::vector<float>& data) {
  for (float f : data)
    if (!std::isfinite(f)) return false;
  return true;
}

}  // namespace lodseg

#endif  // LODSEG_VOLUME_VOLUME_HPP
