#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "svin/error.hpp"

namespace svin {

/// Grid extents, indexed (z, y, x) with x fastest-varying in memory.
struct Dims {
  int d = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr bool positive() const noexcept { return d > 0 && h > 0 && w > 0; }
  constexpr int operator[](int axis) const noexcept { return axis == 0 ? d : (axis == 1 ? h : w); }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const {
    return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

/// Physical voxel size in millimeters, ordered (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  constexpr bool positive() const noexcept { return z > 0 && y > 0 && x > 0; }
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense channel-major 4D array (C, D, H, W). Each channel is a contiguous plane.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, Dims dims, T fill = T(0))
      : channels_(channels), dims_(dims), data_(static_cast<std::size_t>(channels) * dims.voxels(), fill) {
    if (channels < 0 || dims.d < 0 || dims.h < 0 || dims.w < 0) {
      throw ValidationError("tensor extents must be non-negative");
    }
  }

  int channels() const noexcept { return channels_; }
  Dims dims() const noexcept { return dims_; }
  std::size_t plane() const noexcept { return dims_.voxels(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Tensor& o) const noexcept { return channels_ == o.channels_ && dims_ == o.dims_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::span<T> channel(int c) noexcept { return {data_.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const noexcept { return {data_.data() + c * plane(), plane()}; }

  std::size_t index(int c, int z, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(c) * dims_.d + z) * dims_.h + y) * dims_.w + x;
  }
  T& operator()(int c, int z, int y, int x) noexcept { return data_[index(c, z, y, x)]; }
  const T& operator()(int c, int z, int y, int x) const noexcept { return data_[index(c, z, y, x)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(channels_, dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void require_same(const Tensor& o, const char* op) const {
    if (!same_shape(o)) {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str() + " vs " + o.shape_str());
    }
  }

  std::string shape_str() const { return std::to_string(channels_) + "@" + dims_.str(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.channels_ == b.channels_ && a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  int channels_ = 0;
  Dims dims_{};
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace svin
