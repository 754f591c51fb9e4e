#ifndef LODSEG_VOLUME_RESAMPLE_HPP
#define LODSEG_VOLUME_RESAMPLE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "lodseg/core/tensor.hpp"

namespace lodseg {

enum class Interp { linear, nearest };

namespace detail {

// Positions within this distance of a grid point are treated as exactly on
// it, so pure permutations/flips/integer shifts resample without blur.
inline constexpr double kSnap = 1e-6;

inline void split_coordinate(double c, int& base, double& frac) {
  double f = std::floor(c);
  double r = c - f;
  if (r < kSnap) {
    r = 0.0;
  } else if (r > 1.0 - kSnap) {
    r = 0.0;
    f += 1.0;
  }
  base = static_cast<int>(f);
  frac = r;
}

}  // namespace detail

// Trilinear sample with zero outside the grid.
template <typename T>
double sample_linear(const T* src, Shape3 s, double cx, double cy, double cz) {
  int x0, y0, z0;
  double fx, fy, fz;
  detail::split_coordinate(cx, x0, fx);
  detail::split_coordinate(cy, y0, fy);
  detail::split_coordinate(cz, z0, fz);
  if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= s.x || y0 >= s.y || z0 >= s.z) return 0.0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    double wz = dz ? fz : 1.0 - fz;
    if (wz == 0.0) continue;
    int z = z0 + dz;
    if (z < 0 || z >= s.z) continue;
    for (int dy = 0; dy < 2; ++dy) {
      double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      int y = y0 + dy;
      if (y < 0 || y >= s.y) continue;
      for (int dx = 0; dx < 2; ++dx) {
        double wx = dx ? fx : 1.0 - fx;
        if (wx == 0.0) continue;
        int x = x0 + dx;
        if (x < 0 || x >= s.x) continue;
        acc += wz * wy * wx * static_cast<double>(src[s.index(x, y, z)]);
      }
    }
  }
  return acc;
}

template <typename T>
bool sample_nearest(const T* src, Shape3 s, double cx, double cy, double cz, T& out) {
  int x = static_cast<int>(std::floor(cx + 0.5 + detail::kSnap));
  int y = static_cast<int>(std::floor(cy + 0.5 + detail::kSnap));
  int z = static_cast<int>(std::floor(cz + 0.5 + detail::kSnap));
  if (!s.contains(x, y, z)) return false;
  out = src[s.index(x, y, z)];
  return true;
}

// Resamples `src` onto a grid of `out_shape` where output index p maps to
// source index out_to_in * p. Out-of-grid samples take `fill`.
template <typename T>
std::vector<T> resample_affine(const std::vector<T>& src, Shape3 src_shape, const Eigen::Matrix4d& out_to_in,
                               Shape3 out_shape, Interp interp, T fill = T{}) {
  std::vector<T> out(out_shape.voxels(), fill);
  const Eigen::Vector3d step = out_to_in.block<3, 1>(0, 0);
  for (int k = 0; k < out_shape.z; ++k) {
    for (int j = 0; j < out_shape.y; ++j) {
      Eigen::Vector3d p = (out_to_in * Eigen::Vector4d(0, j, k, 1)).head<3>();
      T* row = out.data() + out_shape.index(0, j, k);
      for (int i = 0; i < out_shape.x; ++i, p += step) {
        if (interp == Interp::linear) {
          double v = sample_linear(src.data(), src_shape, p.x(), p.y(), p.z());
          if constexpr (std::is_floating_point_v<T>) {
            row[i] = static_cast<T>(v);
          } else {
            row[i] = static_cast<T>(std::lround(v));
          }
        } else {
          T v;
          if (sample_nearest(src.data(), src_shape, p.x(), p.y(), p.z(), v)) row[i] = v;
        }
      }
    }
  }
  return out;
}

// Resamples through a per-voxel coordinate function (used by deformable
// transforms). `map(i, j, k)` returns the source index coordinate.
template <typename T>
std::vector<T> resample_mapped(const std::vector<T>& src, Shape3 shape,
                               const std::function<Eigen::Vector3d(int, int, int)>& map, Interp interp,
                               T fill = T{}) {
  std::vector<T> out(shape.voxels(), fill);
  for (int k = 0; k < shape.z; ++k)
    for (int j = 0; j < shape.y; ++j)
      for (int i = 0; i < shape.x; ++i) {
        Eigen::Vector3d p = map(i, j, k);
        T& dst = out[shape.index(i, j, k)];
        if (interp == Interp::linear) {
          dst = static_cast<T>(sample_linear(src.data(), shape, p.x(), p.y(), p.z()));
        } else {
          T v;
          if (sample_nearest(src.data(), shape, p.x(), p.y(), p.z(), v)) dst = v;
        }
      }
  return out;
}

// Rigid motion about the grid center, in index space. Angles in degrees,
// applied as Rz * Ry * Rx. Returns the output->input index mapping.
inline Eigen::Matrix4d rigid_about_center(Shape3 s, const Eigen::Vector3d& translation,
                                          const Eigen::Vector3d& degrees) {
  const double k = M_PI / 180.0;
  Eigen::Matrix3d r = (Eigen::AngleAxisd(degrees.z() * k, Eigen::Vector3d::UnitZ()) *
                       Eigen::AngleAxisd(degrees.y() * k, Eigen::Vector3d::UnitY()) *
                       Eigen::AngleAxisd(degrees.x() * k, Eigen::Vector3d::UnitX()))
                          .toRotationMatrix();
  Eigen::Vector3d c((s.x - 1) / 2.0, (s.y - 1) / 2.0, (s.z - 1) / 2.0);
  // forward: p' = R (p - c) + c + t ; inverse: p = R^T (p' - c - t) + c
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  inv.topLeftCorner<3, 3>() = r.transpose();
  inv.block<3, 1>(0, 3) = c - r.transpose() * (c + translation);
  return inv;
}

}  // namespace lodseg

#endif  // LODSEG_VOLUME_RESAMPLE_HPP
