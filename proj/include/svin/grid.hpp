#pragma once

// Grid-aligned volumes and vector fields plus the trilinear kernels everything
// else is built on. Displacements are in voxel units and channel c of a field
// holds the displacement along x (c=0), y (c=1) or z (c=2). Sampling positions
// outside the grid clamp to the nearest boundary voxel.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include "svin/error.hpp"
#include "svin/tensor.hpp"

namespace svin {

template <class T>
class BasicVolume {
 public:
  using value_type = T;

  BasicVolume() = default;
  explicit BasicVolume(Dims dims, Spacing spacing = {}, T fill = T(0))
      : data_(1, dims, fill), spacing_(spacing) {
    validate();
  }
  BasicVolume(Tensor<T> data, Spacing spacing = {}) : data_(std::move(data)), spacing_(spacing) {
    if (data_.channels() != 1) throw ShapeError("volume needs exactly 1 channel, got " + data_.shape_str());
    validate();
  }

  Dims dims() const noexcept { return data_.dims(); }
  const Spacing& spacing() const noexcept { return spacing_; }
  void set_spacing(Spacing s) {
    spacing_ = s;
    validate();
  }
  const Tensor<T>& tensor() const noexcept { return data_; }
  Tensor<T>& tensor() noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }
  T& at(int z, int y, int x) noexcept { return data_(0, z, y, x); }
  const T& at(int z, int y, int x) const noexcept { return data_(0, z, y, x); }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  friend bool operator==(const BasicVolume& a, const BasicVolume& b) {
    return a.spacing_ == b.spacing_ && a.data_ == b.data_;
  }

 private:
  void validate() const {
    if (!spacing_.positive()) throw ValidationError("volume spacing must be strictly positive");
  }

  Tensor<T> data_;
  Spacing spacing_{};
};

template <class T>
class BasicVectorField {
 public:
  using value_type = T;
  static constexpr int components = 3;

  BasicVectorField() = default;
  explicit BasicVectorField(Dims dims, Spacing spacing = {}, T fill = T(0))
      : data_(components, dims, fill), spacing_(spacing) {}
  BasicVectorField(Tensor<T> data, Spacing spacing = {}) : data_(std::move(data)), spacing_(spacing) {
    if (data_.channels() != components) {
      throw ShapeError("vector field needs exactly 3 components, got " + data_.shape_str());
    }
  }

  /// Field with the same displacement (dx, dy, dz) at every voxel.
  static BasicVectorField uniform(Dims dims, T dx, T dy, T dz) {
    BasicVectorField f(dims);
    const T v[3] = {dx, dy, dz};
    for (int c = 0; c < 3; ++c) std::fill(f.data_.channel(c).begin(), f.data_.channel(c).end(), v[c]);
    return f;
  }

  Dims dims() const noexcept { return data_.dims(); }
  const Spacing& spacing() const noexcept { return spacing_; }
  void set_spacing(Spacing s) noexcept { spacing_ = s; }
  const Tensor<T>& tensor() const noexcept { return data_; }
  Tensor<T>& tensor() noexcept { return data_; }
  T& at(int c, int z, int y, int x) noexcept { return data_(c, z, y, x); }
  const T& at(int c, int z, int y, int x) const noexcept { return data_(c, z, y, x); }

  friend bool operator==(const BasicVectorField& a, const BasicVectorField& b) { return a.data_ == b.data_; }

 private:
  Tensor<T> data_;
  Spacing spacing_{};
};

using Volume = BasicVolume<float>;
using VectorField = BasicVectorField<float>;

/// Normalized cardiac phase: 0 is end-diastole, 1 is end-systole.
class PhaseIndex {
 public:
  explicit PhaseIndex(double t) : t_(t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("phase must lie in [0,1], got " + std::to_string(t));
  }
  double value() const noexcept { return t_; }
  operator double() const noexcept { return t_; }

 private:
  double t_;
};

/// Per-axis resampling factors, ordered (z, y, x).
struct Factors {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  static constexpr Factors uniform(double f) noexcept { return {f, f, f}; }
};

namespace kernel {

/// Bracketing of one sampling coordinate. `active` is false where the
/// coordinate was clamped, which also zeroes its derivative.
template <class T>
struct Axis {
  int i0 = 0;
  int i1 = 0;
  T f = T(0);
  bool active = false;
};

template <class T>
inline Axis<T> locate(T pos, int n) noexcept {
  if (pos < T(0)) return {0, 0, T(0), false};
  if (pos >= T(n - 1)) return {n - 1, n - 1, T(0), false};
  const int i0 = static_cast<int>(pos);
  return {i0, i0 + 1, pos - T(i0), true};
}

/// Eight-corner trilinear stencil at one sampling position.
template <class T>
struct Stencil {
  Axis<T> ax, ay, az;
  std::size_t off[8];
  T w[8];

  Stencil(const Axis<T>& x, const Axis<T>& y, const Axis<T>& z, Dims dims) : ax(x), ay(y), az(z) {
    const std::size_t hw = static_cast<std::size_t>(dims.h) * dims.w;
    const int zs[2] = {z.i0, z.i1};
    const int ys[2] = {y.i0, y.i1};
    const int xs[2] = {x.i0, x.i1};
    const T wz[2] = {T(1) - z.f, z.f};
    const T wy[2] = {T(1) - y.f, y.f};
    const T wx[2] = {T(1) - x.f, x.f};
    int k = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c, ++k) {
          off[k] = zs[a] * hw + static_cast<std::size_t>(ys[b]) * dims.w + xs[c];
          w[k] = wz[a] * wy[b] * wx[c];
        }
  }

  T sample(const T* plane) const noexcept {
    T v = T(0);
    for (int k = 0; k < 8; ++k) v += w[k] * plane[off[k]];
    return v;
  }

  void scatter(T* plane, T g) const noexcept {
    for (int k = 0; k < 8; ++k) plane[off[k]] += w[k] * g;
  }

  /// Partial derivatives of the interpolant with respect to (x, y, z).
  void derivative(const T* p, T& dx, T& dy, T& dz) const noexcept {
    T c[8];
    for (int k = 0; k < 8; ++k) c[k] = p[off[k]];
    const T fx = ax.f, fy = ay.f, fz = az.f;
    // corner k = 4*zbit + 2*ybit + xbit
    dx = dy = dz = T(0);
    if (ax.active) {
      dx = (T(1) - fz) * ((T(1) - fy) * (c[1] - c[0]) + fy * (c[3] - c[2])) +
           fz * ((T(1) - fy) * (c[5] - c[4]) + fy * (c[7] - c[6]));
    }
    if (ay.active) {
      dy = (T(1) - fz) * ((T(1) - fx) * (c[2] - c[0]) + fx * (c[3] - c[1])) +
           fz * ((T(1) - fx) * (c[6] - c[4]) + fx * (c[7] - c[5]));
    }
    if (az.active) {
      dz = (T(1) - fy) * ((T(1) - fx) * (c[4] - c[0]) + fx * (c[5] - c[1])) +
           fy * ((T(1) - fx) * (c[6] - c[2]) + fx * (c[7] - c[3]));
    }
  }
};

template <class T>
inline void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

template <class T>
inline void require_field_for(const Tensor<T>& src, const Tensor<T>& field, const char* op) {
  if (field.channels() != 3) throw ShapeError(std::string(op) + ": field must have 3 components");
  if (!(src.dims() == field.dims())) {
    throw ShapeError(std::string(op) + ": grid mismatch " + src.dims().str() + " vs " + field.dims().str());
  }
}

template <class T>
Stencil<T> displaced(const Tensor<T>& field, std::size_t v, int z, int y, int x) {
  const std::size_t n = field.plane();
  const T* f = field.data();
  const Dims d = field.dims();
  return Stencil<T>(locate(T(x) + f[v], d.w), locate(T(y) + f[n + v], d.h), locate(T(z) + f[2 * n + v], d.d), d);
}

/// out[c](v) = src[c] sampled at v + field(v), for every channel of src.
template <class T>
Tensor<T> warp(const Tensor<T>& src, const Tensor<T>& field) {
  require_field_for(src, field, "warp");
  require_finite(field, "warp field");
  const Dims d = src.dims();
  const std::size_t n = src.plane();
  Tensor<T> out(src.channels(), d);
  std::size_t v = 0;
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x, ++v) {
        const Stencil<T> s = displaced(field, v, z, y, x);
        for (int c = 0; c < src.channels(); ++c) out[c * n + v] = s.sample(src.data() + c * n);
      }
  return out;
}

/// Adjoint of `warp`: accumulates into grad_src and/or grad_field (either may be null).
template <class T>
void warp_backward(const Tensor<T>& src, const Tensor<T>& field, const Tensor<T>& grad_out, Tensor<T>* grad_src,
                   Tensor<T>* grad_field) {
  const Dims d = src.dims();
  const std::size_t n = src.plane();
  std::size_t v = 0;
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x, ++v) {
        const Stencil<T> s = displaced(field, v, z, y, x);
        T gx = 0, gy = 0, gz = 0;
        for (int c = 0; c < src.channels(); ++c) {
          const T g = grad_out[c * n + v];
          if (g == T(0)) continue;
          if (grad_src) s.scatter(grad_src->data() + c * n, g);
          if (grad_field) {
            T dx, dy, dz;
            s.derivative(src.data() + c * n, dx, dy, dz);
            gx += g * dx;
            gy += g * dy;
            gz += g * dz;
          }
        }
        if (grad_field) {
          (*grad_field)[v] += gx;
          (*grad_field)[n + v] += gy;
          (*grad_field)[2 * n + v] += gz;
        }
      }
}

/// Source coordinate of output index j when mapping `in` samples onto `out`
/// samples with voxel centers aligned (half-voxel convention).
template <class T>
inline T source_coord(int j, int in, int out) noexcept {
  return (T(j) + T(0.5)) * T(in) / T(out) - T(0.5);
}

/// Trilinear resampling of every channel onto a grid of `out` dims.
template <class T>
Tensor<T> resample(const Tensor<T>& src, Dims out) {
  const Dims in = src.dims();
  Tensor<T> res(src.channels(), out);
  const std::size_t n_in = src.plane(), n_out = res.plane();
  std::size_t v = 0;
  for (int z = 0; z < out.d; ++z) {
    const auto az = locate(source_coord<T>(z, in.d, out.d), in.d);
    for (int y = 0; y < out.h; ++y) {
      const auto ay = locate(source_coord<T>(y, in.h, out.h), in.h);
      for (int x = 0; x < out.w; ++x, ++v) {
        const Stencil<T> s(locate(source_coord<T>(x, in.w, out.w), in.w), ay, az, in);
        for (int c = 0; c < src.channels(); ++c) res[c * n_out + v] = s.sample(src.data() + c * n_in);
      }
    }
  }
  return res;
}

template <class T>
void resample_backward(const Tensor<T>& grad_out, Tensor<T>& grad_src) {
  const Dims in = grad_src.dims(), out = grad_out.dims();
  const std::size_t n_in = grad_src.plane(), n_out = grad_out.plane();
  std::size_t v = 0;
  for (int z = 0; z < out.d; ++z) {
    const auto az = locate(source_coord<T>(z, in.d, out.d), in.d);
    for (int y = 0; y < out.h; ++y) {
      const auto ay = locate(source_coord<T>(y, in.h, out.h), in.h);
      for (int x = 0; x < out.w; ++x, ++v) {
        const Stencil<T> s(locate(source_coord<T>(x, in.w, out.w), in.w), ay, az, in);
        for (int c = 0; c < grad_out.channels(); ++c) s.scatter(grad_src.data() + c * n_in, grad_out[c * n_out + v]);
      }
    }
  }
}

/// Per-axis multiplier that keeps displacements in target-grid voxel units.
template <class T>
inline void rescale_vectors(Tensor<T>& field, Dims from, Dims to) {
  const T s[3] = {T(to.w) / T(from.w), T(to.h) / T(from.h), T(to.d) / T(from.d)};
  for (int c = 0; c < 3; ++c)
    for (auto& v : field.channel(c)) v *= s[c];
}

/// Forward differences: channel (component*3 + axis), axis 0=z, 1=y, 2=x.
/// The trailing slab along each axis is zero.
template <class T>
Tensor<T> forward_differences(const Tensor<T>& field) {
  const Dims d = field.dims();
  const int comps = field.channels();
  Tensor<T> g(comps * 3, d);
  const std::size_t n = field.plane();
  const std::size_t step[3] = {static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.w), 1};
  for (int c = 0; c < comps; ++c) {
    const T* f = field.data() + c * n;
    for (int axis = 0; axis < 3; ++axis) {
      T* out = g.data() + (c * 3 + axis) * n;
      std::size_t v = 0;
      for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
          for (int x = 0; x < d.w; ++x, ++v) {
            const int pos = axis == 0 ? z : (axis == 1 ? y : x);
            out[v] = pos + 1 < d[axis] ? f[v + step[axis]] - f[v] : T(0);
          }
    }
  }
  return g;
}

/// Adjoint of forward_differences.
template <class T>
void forward_differences_backward(const Tensor<T>& grad_g, Tensor<T>& grad_field) {
  const Dims d = grad_field.dims();
  const std::size_t n = grad_field.plane();
  const std::size_t step[3] = {static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.w), 1};
  for (int c = 0; c < grad_field.channels(); ++c) {
    T* gf = grad_field.data() + c * n;
    for (int axis = 0; axis < 3; ++axis) {
      const T* gg = grad_g.data() + (c * 3 + axis) * n;
      std::size_t v = 0;
      for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
          for (int x = 0; x < d.w; ++x, ++v) {
            const int pos = axis == 0 ? z : (axis == 1 ? y : x);
            if (pos + 1 < d[axis]) {
              gf[v + step[axis]] += gg[v];
              gf[v] -= gg[v];
            }
          }
    }
  }
}

}  // namespace kernel

inline Dims resampled_dims(Dims in, Factors f) {
  if (!(f.z > 0 && f.y > 0 && f.x > 0)) throw ValidationError("resampling factors must be positive");
  auto axis = [](int n, double fac, const char* name) {
    const double out = n * fac;
    const double r = std::round(out);
    if (std::abs(out - r) > 1e-6 || r < 1) {
      throw ValidationError(std::string("factor along ") + name + " gives non-integer or empty extent " +
                            std::to_string(out));
    }
    return static_cast<int>(r);
  };
  return {axis(in.d, f.z, "z"), axis(in.h, f.y, "y"), axis(in.w, f.x, "x")};
}

/// Trilinear sample of `volume` at v + field(v); identity for a zero field.
template <class T>
BasicVolume<T> warp(const BasicVolume<T>& volume, const BasicVectorField<T>& field) {
  return BasicVolume<T>(kernel::warp(volume.tensor(), field.tensor()), volume.spacing());
}

/// Componentwise trilinear sample of field_a at v + field_b(v).
template <class T>
BasicVectorField<T> warp_field(const BasicVectorField<T>& field_a, const BasicVectorField<T>& field_b) {
  return BasicVectorField<T>(kernel::warp(field_a.tensor(), field_b.tensor()), field_a.spacing());
}

/// Index of d(component)/d(axis) in the stack returned by spatial_gradient.
constexpr int gradient_channel(int component, int axis) noexcept { return component * 3 + axis; }

/// Nine forward-difference grids of a field (3 components x 3 axes).
template <class T>
Tensor<T> spatial_gradient(const BasicVectorField<T>& field) {
  const Dims d = field.dims();
  if (d.d < 2 || d.h < 2 || d.w < 2) {
    throw ValidationError("spatial_gradient needs at least 2 voxels per axis, got " + d.str());
  }
  return kernel::forward_differences(field.tensor());
}

template <class T>
double l1_norm(const Tensor<T>& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += std::abs(static_cast<double>(t[i]));
  return s;
}

template <class T>
BasicVolume<T> resample_volume(const BasicVolume<T>& volume, Dims out) {
  if (!out.positive()) throw ValidationError("resample target must be non-empty, got " + out.str());
  const Dims in = volume.dims();
  const Spacing s = volume.spacing();
  const Spacing scaled{s.z * in.d / out.d, s.y * in.h / out.h, s.x * in.w / out.w};
  if (out == in) return volume;
  return BasicVolume<T>(kernel::resample(volume.tensor(), out), scaled);
}

template <class T>
BasicVolume<T> resample_volume(const BasicVolume<T>& volume, Factors f) {
  return resample_volume(volume, resampled_dims(volume.dims(), f));
}

template <class T>
BasicVectorField<T> resample_field(const BasicVectorField<T>& field, Dims out) {
  if (!out.positive()) throw ValidationError("resample target must be non-empty, got " + out.str());
  const Dims in = field.dims();
  if (out == in) return field;
  Tensor<T> r = kernel::resample(field.tensor(), out);
  kernel::rescale_vectors(r, in, out);
  const Spacing s = field.spacing();
  return BasicVectorField<T>(std::move(r), Spacing{s.z * in.d / out.d, s.y * in.h / out.h, s.x * in.w / out.w});
}

template <class T>
BasicVectorField<T> resample_field(const BasicVectorField<T>& field, Factors f) {
  return resample_field(field, resampled_dims(field.dims(), f));
}

/// Min-max contrast normalization to [0,1]; a constant volume maps to zeros.
template <class T>
BasicVolume<T> normalize(const BasicVolume<T>& volume) {
  BasicVolume<T> out = volume;
  if (out.size() == 0) return out;
  auto span = out.tensor().span();
  const auto [lo, hi] = std::minmax_element(span.begin(), span.end());
  const T mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    out.tensor().fill(T(0));
    return out;
  }
  const T inv = T(1) / (mx - mn);
  for (auto& v : span) v = std::clamp((v - mn) * inv, T(0), T(1));
  return out;
}

}  // namespace svin
