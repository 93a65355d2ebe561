#pragma once

// Synthetic contracting-shell sequences with analytically known motion, and
// the resample / crop / pad / normalize preprocessing chain.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "svin/grid.hpp"
#include "svin/sample.hpp"

namespace svin {

struct PhantomSpec {
  Dims dims{32, 32, 32};
  /// Shell center in voxel coordinates (z, y, x).
  std::array<double, 3> center{15.5, 15.5, 15.5};
  /// Outer radii (z, y, x); z is the long axis.
  std::array<double, 3> radii{12.0, 9.5, 9.5};
  double thickness = 4.0;
  double alpha = 0.3;
  double exponent = 2.0;
  double twist = 0.3;
  double noise = 0.01;
  std::uint64_t seed = 0;

  /// Proportional defaults for a grid.
  static PhantomSpec for_dims(Dims d) {
    PhantomSpec s;
    s.dims = d;
    s.center = {(d.d - 1) / 2.0, (d.h - 1) / 2.0, (d.w - 1) / 2.0};
    auto fit = [](double r, int n) { return std::min(r, (n - 1) / 2.0 - 2.0); };
    s.radii = {fit(0.375 * d.d, d.d), fit(0.3 * d.h, d.h), fit(0.3 * d.w, d.w)};
    s.thickness = std::max(2.0, 0.125 * std::min({d.d, d.h, d.w}));
    return s;
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!dims.positive()) errs.push_back("phantom.dims must be positive");
    const std::array<int, 3> n{dims.d, dims.h, dims.w};
    const char* axis[] = {"z", "y", "x"};
    for (int a = 0; a < 3; ++a) {
      if (!(radii[a] > 0)) {
        errs.push_back(std::string("phantom.radii.") + axis[a] + " must be > 0");
      } else if (center[a] - radii[a] < 2.0 || center[a] + radii[a] > n[a] - 1 - 2.0) {
        errs.push_back(std::string("phantom shell exceeds the grid along ") + axis[a] + " (margin 2 voxels)");
      }
    }
    if (!(thickness > 0) || !(thickness < *std::min_element(radii.begin(), radii.end()))) {
      errs.push_back("phantom.thickness must lie in (0, min radius)");
    }
    if (!(alpha >= 0 && alpha < 1)) errs.push_back("phantom.alpha must lie in [0,1)");
    if (!(exponent > 0)) errs.push_back("phantom.exponent must be > 0");
    if (!std::isfinite(twist)) errs.push_back("phantom.twist must be finite");
    if (!(noise >= 0)) errs.push_back("phantom.noise must be >= 0");
    return errs;
  }
};

namespace detail {

inline void throw_if_invalid(const std::vector<std::string>& errs) {
  if (errs.empty()) return;
  std::string msg = errs.front();
  for (std::size_t i = 1; i < errs.size(); ++i) msg += "; " + errs[i];
  throw ValidationError(msg);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// s(t) = t^p.
inline double phantom_phase(const PhantomSpec& spec, double t) { return std::pow(t, spec.exponent); }

/// Displacement at s(t) = 1. The phase-t field is phantom_phase(t) times this.
inline VectorField phantom_unit_field(const PhantomSpec& spec) {
  detail::throw_if_invalid(spec.validate());
  const Dims d = spec.dims;
  VectorField u(d);
  const double k = spec.alpha / (1.0 - spec.alpha);
  const auto [cz, cy, cx] = spec.center;
  for (int z = 0; z < d.d; ++z) {
    const double rz = z - cz;
    const double angle = spec.twist * rz / spec.radii[0];
    for (int y = 0; y < d.h; ++y) {
      const double ry = y - cy;
      for (int x = 0; x < d.w; ++x) {
        const double rx = x - cx;
        u.at(0, z, y, x) = static_cast<float>(k * rx - angle * ry);
        u.at(1, z, y, x) = static_cast<float>(k * ry + angle * rx);
        u.at(2, z, y, x) = static_cast<float>(k * rz);
      }
    }
  }
  return u;
}

inline VectorField phantom_field(const PhantomSpec& spec, double t) {
  VectorField f = phantom_unit_field(spec);
  f.tensor() *= static_cast<float>(phantom_phase(spec, t));
  return f;
}

/// Noise-free ED image: bright shell, dimmer cavity, dark background, soft edges.
inline Volume phantom_ed_image(const PhantomSpec& spec) {
  detail::throw_if_invalid(spec.validate());
  const Dims d = spec.dims;
  Volume v(d);
  const auto& r = spec.radii;
  const std::array<double, 3> ri{r[0] - spec.thickness, r[1] - spec.thickness, r[2] - spec.thickness};
  const double ro_min = *std::min_element(r.begin(), r.end());
  const double ri_min = *std::min_element(ri.begin(), ri.end());
  constexpr double edge = 0.6;
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        const std::array<double, 3> p{z - spec.center[0], y - spec.center[1], x - spec.center[2]};
        double ro = 0, rin = 0;
        for (int a = 0; a < 3; ++a) {
          ro += (p[a] / r[a]) * (p[a] / r[a]);
          rin += (p[a] / ri[a]) * (p[a] / ri[a]);
        }
        const double outer = detail::sigmoid((1.0 - std::sqrt(ro)) * ro_min / edge);
        const double inner = detail::sigmoid((1.0 - std::sqrt(rin)) * ri_min / edge);
        v.at(z, y, x) = static_cast<float>(outer - 0.6 * inner);
      }
  return v;
}

/// Binary shell mask at ED.
inline Volume phantom_ed_mask(const PhantomSpec& spec) {
  detail::throw_if_invalid(spec.validate());
  const Dims d = spec.dims;
  Volume m(d);
  const auto& r = spec.radii;
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        const std::array<double, 3> p{z - spec.center[0], y - spec.center[1], x - spec.center[2]};
        double ro = 0, rin = 0;
        for (int a = 0; a < 3; ++a) {
          const double ri = r[a] - spec.thickness;
          ro += (p[a] / r[a]) * (p[a] / r[a]);
          rin += (p[a] / ri) * (p[a] / ri);
        }
        m.at(z, y, x) = ro <= 1.0 && rin > 1.0 ? 1.0f : 0.0f;
      }
  return m;
}

/// Label mask carried along a field: warp then threshold at 0.5.
inline Volume warp_mask(const Volume& mask, const VectorField& field) {
  Volume w = warp(mask, field);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] >= 0.5f ? 1.0f : 0.0f;
  return w;
}

/// Sequence with phases t_k = k/(n_phases-1). Endpoints become ED/ES, the rest
/// intermediates; every phase carries its exact field and shell mask.
inline PhaseSample generate_phantom(const PhantomSpec& spec, int n_phases, std::string id = "phantom") {
  detail::throw_if_invalid(spec.validate());
  if (n_phases < 3) throw ValidationError("n_phases must be >= 3, got " + std::to_string(n_phases));
  const Volume clean = phantom_ed_image(spec);
  const Volume mask = phantom_ed_mask(spec);
  const VectorField unit = phantom_unit_field(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, spec.noise);
  auto noisy = [&](Volume v) {
    if (spec.noise > 0) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<float>(std::clamp(v[i] + gauss(rng), 0.0, 1.0));
      }
    }
    return v;
  };

  PhaseSample s;
  s.id = std::move(id);
  s.ed = noisy(clean);
  s.ed_mask = mask;
  for (int k = 1; k < n_phases; ++k) {
    const double t = static_cast<double>(k) / (n_phases - 1);
    VectorField f = unit;
    f.tensor() *= static_cast<float>(phantom_phase(spec, t));
    Volume img = noisy(warp(clean, f));
    Volume m = warp_mask(mask, f);
    if (k == n_phases - 1) {
      s.es = std::move(img);
      s.es_mask = std::move(m);
      s.es_field = std::move(f);
    } else {
      s.intermediates.push_back({t, std::move(img), std::move(m), std::move(f)});
    }
  }
  return s;
}

/// Per-sample variant of `base`: center shifted by up to one voxel and radii
/// scaled into [0.92, 1], drawn from (base.seed, index).
inline PhantomSpec jittered(const PhantomSpec& base, std::size_t index) {
  PhantomSpec s = base;
  s.seed = base.seed * 1000003ULL + index;
  std::mt19937_64 rng(s.seed ^ 0x5DEECE66DULL);
  std::uniform_real_distribution<double> shift(-1.0, 1.0), scale(0.92, 1.0);
  for (int a = 0; a < 3; ++a) {
    s.center[a] += shift(rng);
    s.radii[a] *= scale(rng);
  }
  if (!s.validate().empty()) s.center = base.center;
  return s;
}

inline std::vector<PhaseSample> generate_phantom_dataset(const PhantomSpec& base, std::size_t samples, int n_phases) {
  std::vector<PhaseSample> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sample_%03zu", i);
    out.push_back(generate_phantom(jittered(base, i), n_phases, id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Centered sub-grid of `crop` dims.
template <class T>
BasicVolume<T> center_crop(const BasicVolume<T>& v, Dims crop) {
  const Dims d = v.dims();
  if (!crop.positive() || crop.d > d.d || crop.h > d.h || crop.w > d.w) {
    throw ValidationError("crop " + crop.str() + " does not fit inside " + d.str());
  }
  const int oz = (d.d - crop.d) / 2, oy = (d.h - crop.h) / 2, ox = (d.w - crop.w) / 2;
  BasicVolume<T> out(crop, v.spacing());
  for (int z = 0; z < crop.d; ++z)
    for (int y = 0; y < crop.h; ++y)
      for (int x = 0; x < crop.w; ++x) out.at(z, y, x) = v.at(z + oz, y + oy, x + ox);
  return out;
}

/// Zero-pads z to `depth`, splitting the extra slices evenly (the odd one after).
template <class T>
BasicVolume<T> pad_z(const BasicVolume<T>& v, int depth) {
  const Dims d = v.dims();
  if (depth < d.d) throw ValidationError("pad target " + std::to_string(depth) + " is below depth " + std::to_string(d.d));
  const int before = (depth - d.d) / 2;
  BasicVolume<T> out(Dims{depth, d.h, d.w}, v.spacing());
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) out.at(z + before, y, x) = v.at(z, y, x);
  return out;
}

template <class T>
BasicVolume<T> preprocess(const BasicVolume<T>& v, Dims target, Dims crop, int pad_z_to) {
  if (!target.positive()) throw ValidationError("preprocess target dims must be positive");
  if (crop.d > target.d || crop.h > target.h || crop.w > target.w) {
    throw ValidationError("crop " + crop.str() + " larger than resampled dims " + target.str());
  }
  return normalize(pad_z(center_crop(resample_volume(v, target), crop), pad_z_to));
}

}  // namespace svin
