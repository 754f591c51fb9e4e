#ifndef LODSEG_CORE_TENSOR_HPP
#define LODSEG_CORE_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"

namespace lodseg {

// Grid extents. Linear voxel index is x + X * (y + Y * z), the NIfTI order.
struct Shape3 {
  int x = 0;
  int y = 0;
  int z = 0;

  constexpr std::size_t voxels() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  constexpr std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(x) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(y) * k);
  }
  constexpr bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < x && j < y && k < z;
  }
  constexpr int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr bool positive() const { return x > 0 && y > 0 && z > 0; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;

  Shape3 divided(int f) const { return {x / f, y / f, z / f}; }
  Shape3 scaled(int f) const { return {x * f, y * f, z * f}; }

  static constexpr Shape3 cube(int n) { return {n, n, n}; }
};

inline std::ostream& operator<<(std::ostream& os, const Shape3& s) {
  return os << '(' << s.x << ',' << s.y << ',' << s.z << ')';
}

inline std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s.x) + "," + std::to_string(s.y) + "," + std::to_string(s.z) + ")";
}

// Channels-first dense 4D array: channel c occupies the contiguous range
// [c * voxels, (c + 1) * voxels).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, Shape3 shape, T fill = T{})
      : channels_(channels), shape_(shape), data_(static_cast<std::size_t>(channels) * shape.voxels(), fill) {}

  int channels() const { return channels_; }
  const Shape3& shape() const { return shape_; }
  std::size_t voxels() const { return shape_.voxels(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::span<T> channel(int c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const T> channel(int c) const { return {data_.data() + c * voxels(), voxels()}; }

  T& at(int c, int i, int j, int k) { return data_[c * voxels() + shape_.index(i, j, k)]; }
  const T& at(int c, int i, int j, int k) const { return data_[c * voxels() + shape_.index(i, j, k)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_layout(const Tensor& o) const { return channels_ == o.channels_ && shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    detail::require<ContractError>(same_layout(o), "tensor add: layout mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(channels_, shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.values()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int channels_ = 0;
  Shape3 shape_{};
  std::vector<T> data_;
};

}  // namespace lodseg

#endif  // LODSEG_CORE_TENSOR_HPP
