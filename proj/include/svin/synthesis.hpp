#pragma once

// Closed-form intermediate fields and blended intermediate volumes.

#include <string>
#include <utility>

#include "svin/autodiff.hpp"
#include "svin/grid.hpp"

namespace svin {

/// Per-voxel ED-side blend weight; the ES-side weight is always 1 - gamma_ed.
template <class T>
class BasicWeightMap {
 public:
  explicit BasicWeightMap(BasicVolume<T> gamma_ed) : gamma_ed_(std::move(gamma_ed)) {
    for (std::size_t i = 0; i < gamma_ed_.size(); ++i) {
      const T g = gamma_ed_[i];
      if (!(g >= T(0) && g <= T(1))) {
        throw ValidationError("weight map value " + std::to_string(g) + " outside [0,1]");
      }
    }
  }
  static BasicWeightMap uniform(Dims d, T value) { return BasicWeightMap(BasicVolume<T>(d, {}, value)); }

  const BasicVolume<T>& gamma_ed() const noexcept { return gamma_ed_; }
  BasicVolume<T> gamma_es() const {
    BasicVolume<T> out = gamma_ed_;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - gamma_ed_[i];
    return out;
  }
  Dims dims() const noexcept { return gamma_ed_.dims(); }

 private:
  BasicVolume<T> gamma_ed_;
};

using WeightMap = BasicWeightMap<float>;

template <class T>
struct FieldPair {
  BasicVectorField<T> from_ed;  ///< phi_{ED->t}
  BasicVectorField<T> from_es;  ///< phi_{ES->t}
};

namespace detail {

template <class T>
BasicVectorField<T> axpby(T a, const BasicVectorField<T>& x, T b, const BasicVectorField<T>& y) {
  x.tensor().require_same(y.tensor(), "field combination");
  BasicVectorField<T> out = x;
  auto& o = out.tensor();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * x.tensor()[i] + b * y.tensor()[i];
  return out;
}

template <class T>
BasicVectorField<T> scaled(T a, const BasicVectorField<T>& x) {
  BasicVectorField<T> out = x;
  out.tensor() *= a;
  return out;
}

inline void require_matching(Dims a, Dims b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": grid mismatch " + a.str() + " vs " + b.str());
}

}  // namespace detail

/// phi_{ED->t} = t * fwd, phi_{ES->t} = (1 - t) * bwd.
template <class T>
FieldPair<T> linear_intermediate_fields(const BasicVectorField<T>& fwd, const BasicVectorField<T>& bwd, PhaseIndex t) {
  detail::require_matching(fwd.dims(), bwd.dims(), "linear_intermediate_fields");
  const T tt = static_cast<T>(t.value());
  return {detail::scaled(tt, fwd), detail::scaled(T(1) - tt, bwd)};
}

/// Bi-directionally consistent scaffold, implemented term for term:
///   phi_{ED->t} = t(1-t) fwd - t^2 warp_field(bwd, bwd)
///   phi_{ES->t} = -(1-t)^2 warp_field(fwd, fwd) + t(1-t) bwd
template <class T>
FieldPair<T> consistent_intermediate_fields(const BasicVectorField<T>& fwd, const BasicVectorField<T>& bwd,
                                            PhaseIndex t) {
  detail::require_matching(fwd.dims(), bwd.dims(), "consistent_intermediate_fields");
  const T tt = static_cast<T>(t.value());
  const T u = T(1) - tt;
  return {detail::axpby(tt * u, fwd, -tt * tt, warp_field(bwd, bwd)),
          detail::axpby(-u * u, warp_field(fwd, fwd), tt * u, bwd)};
}

/// (1-t) warp(ED, phi_ED) + t warp(ES, phi_ES).
template <class T>
BasicVolume<T> blend_linear(const BasicVolume<T>& ed, const BasicVolume<T>& es, const BasicVectorField<T>& from_ed,
                            const BasicVectorField<T>& from_es, PhaseIndex t) {
  detail::require_matching(ed.dims(), es.dims(), "blend_linear");
  const T tt = static_cast<T>(t.value());
  const BasicVolume<T> a = warp(ed, from_ed);
  const BasicVolume<T> b = warp(es, from_es);
  BasicVolume<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T(1) - tt) * a[i] + tt * b[i];
  return out;
}

/// Gamma-weighted blend. With `normalize` the weighted sum is divided by
/// ((1-t) gamma_ED + t gamma_ES + 1e-8); without it the raw sum is returned.
template <class T>
BasicVolume<T> blend_weighted(const BasicVolume<T>& ed, const BasicVolume<T>& es, const BasicVectorField<T>& from_ed,
                              const BasicVectorField<T>& from_es, PhaseIndex t, const BasicWeightMap<T>& gamma,
                              bool normalize = true) {
  detail::require_matching(ed.dims(), es.dims(), "blend_weighted");
  detail::require_matching(ed.dims(), gamma.dims(), "blend_weighted gamma");
  using ad::Var;
  const Var<T> out = ad::blend_weighted(Var<T>::constant(kernel::warp(ed.tensor(), from_ed.tensor())),
                                        Var<T>::constant(kernel::warp(es.tensor(), from_es.tensor())),
                                        Var<T>::constant(gamma.gamma_ed().tensor()), static_cast<T>(t.value()),
                                        normalize);
  return BasicVolume<T>(out.value(), ed.spacing());
}

/// Voxelwise (1-t) ED + t ES with no motion compensation.
template <class T>
BasicVolume<T> intensity_blend(const BasicVolume<T>& ed, const BasicVolume<T>& es, PhaseIndex t) {
  detail::require_matching(ed.dims(), es.dims(), "intensity_blend");
  const T tt = static_cast<T>(t.value());
  BasicVolume<T> out = ed;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T(1) - tt) * ed[i] + tt * es[i];
  return out;
}

}  // namespace svin
