#pragma once

#include <array>
#include <string>

#include "svin/grid.hpp"

namespace svin {

inline constexpr int kPyramidLevels = 3;

/// Three-level coarse-to-fine stack. Level 1 is the coarsest, level 3 the
/// full-resolution input; adjacent levels differ by a factor of 2 per axis.
template <class G>
class Pyramid {
 public:
  Pyramid() = default;
  explicit Pyramid(std::array<G, kPyramidLevels> levels) : levels_(std::move(levels)) {}

  /// Level c in 1..3.
  const G& level(int c) const { return levels_.at(static_cast<std::size_t>(check(c) - 1)); }
  G& level(int c) { return levels_.at(static_cast<std::size_t>(check(c) - 1)); }
  const G& finest() const { return levels_.back(); }
  const G& coarsest() const { return levels_.front(); }

  friend bool operator==(const Pyramid&, const Pyramid&) = default;

 private:
  static int check(int c) {
    if (c < 1 || c > kPyramidLevels) throw DomainError("pyramid level must be 1..3, got " + std::to_string(c));
    return c;
  }

  std::array<G, kPyramidLevels> levels_{};
};

/// Dims of level c (1..3) for a full-resolution grid.
inline Dims level_dims(Dims full, int c) {
  const int shift = kPyramidLevels - c;
  auto f = [shift](int n) {
    for (int i = 0; i < shift; ++i) n = (n + 1) / 2;
    return n;
  };
  return {f(full.d), f(full.h), f(full.w)};
}

inline void require_pyramid_dims(Dims d) {
  if (d.d % 4 != 0 || d.h % 4 != 0 || d.w % 4 != 0) {
    auto pad = [](int n) { return (4 - n % 4) % 4; };
    throw ValidationError("pyramid needs every extent divisible by 4; " + d.str() + " needs padding (" +
                          std::to_string(pad(d.d)) + "," + std::to_string(pad(d.h)) + "," +
                          std::to_string(pad(d.w)) + ")");
  }
}

namespace kernel {

/// 2x2x2 average pooling of every channel; extents must be even.
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& src) {
  const Dims in = src.dims();
  const Dims out{in.d / 2, in.h / 2, in.w / 2};
  Tensor<T> res(src.channels(), out);
  for (int c = 0; c < src.channels(); ++c)
    for (int z = 0; z < out.d; ++z)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          T s = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) s += src(c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
          res(c, z, y, x) = s * T(0.125);
        }
  return res;
}

template <class T>
void avg_pool2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_src) {
  const Dims out = grad_out.dims();
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int z = 0; z < out.d; ++z)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          const T g = grad_out(c, z, y, x) * T(0.125);
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) grad_src(c, 2 * z + dz, 2 * y + dy, 2 * x + dx) += g;
        }
}

}  // namespace kernel

template <class T>
Pyramid<BasicVolume<T>> build_pyramid(const BasicVolume<T>& v) {
  require_pyramid_dims(v.dims());
  auto pool = [](const BasicVolume<T>& src) {
    const Spacing s = src.spacing();
    return BasicVolume<T>(kernel::avg_pool2(src.tensor()), Spacing{2 * s.z, 2 * s.y, 2 * s.x});
  };
  BasicVolume<T> l2 = pool(v);
  BasicVolume<T> l1 = pool(l2);
  return Pyramid<BasicVolume<T>>({std::move(l1), std::move(l2), v});
}

/// Field pyramid: averaged vectors are halved so they stay in each level's voxel units.
template <class T>
Pyramid<BasicVectorField<T>> build_pyramid(const BasicVectorField<T>& f) {
  require_pyramid_dims(f.dims());
  auto pool = [](const BasicVectorField<T>& src) {
    Tensor<T> t = kernel::avg_pool2(src.tensor());
    t *= T(0.5);
    const Spacing s = src.spacing();
    return BasicVectorField<T>(std::move(t), Spacing{2 * s.z, 2 * s.y, 2 * s.x});
  };
  BasicVectorField<T> l2 = pool(f);
  BasicVectorField<T> l1 = pool(l2);
  return Pyramid<BasicVectorField<T>>({std::move(l1), std::move(l2), f});
}

/// Carries a level-c field onto level c+1 (trilinear, vectors doubled).
template <class T>
BasicVectorField<T> upsample_field_to_next(const BasicVectorField<T>& field, int level) {
  if (level != 1 && level != 2) {
    throw DomainError("upsample_field_to_next needs level 1 or 2, got " + std::to_string(level));
  }
  const Dims d = field.dims();
  return resample_field(field, Dims{2 * d.d, 2 * d.h, 2 * d.w});
}

}  // namespace svin
