#pragma once

// Image-similarity and overlap metrics plus per-phase reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svin/grid.hpp"

namespace svin::metrics {

namespace detail {

template <class T>
void require_same(const BasicVolume<T>& a, const BasicVolume<T>& b, const char* op) {
  if (!(a.dims() == b.dims())) throw ShapeError(std::string(op) + ": grid mismatch " + a.dims().str() + " vs " + b.dims().str());
}

}  // namespace detail

template <class T>
double mse(const BasicVolume<T>& a, const BasicVolume<T>& b) {
  detail::require_same(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// sqrt(mse) / (max(ref) - min(ref)).
template <class T>
double nrmse(const BasicVolume<T>& pred, const BasicVolume<T>& ref) {
  detail::require_same(pred, ref, "nrmse");
  double lo = ref[0], hi = ref[0];
  for (std::size_t i = 0; i < ref.size(); ++i) {
    lo = std::min(lo, static_cast<double>(ref[i]));
    hi = std::max(hi, static_cast<double>(ref[i]));
  }
  if (!(hi > lo)) throw ValidationError("nrmse: reference volume has zero intensity range");
  return std::sqrt(mse(pred, ref)) / (hi - lo);
}

/// 10 log10(peak^2 / mse); +infinity when mse is zero.
inline double psnr_from_mse(double mse_value, double peak = 1.0) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

template <class T>
double psnr(const BasicVolume<T>& pred, const BasicVolume<T>& ref, double peak = 1.0) {
  return psnr_from_mse(mse(pred, ref), peak);
}

inline constexpr int kSsimWindow = 7;

namespace detail {

// Inclusive prefix sums over a (D+1)(H+1)(W+1) grid.
class Integral {
 public:
  Integral(Dims d, const std::vector<double>& v) : h_(d.h + 1), w_(d.w + 1), s_(std::size_t(d.d + 1) * h_ * w_, 0.0) {
    for (int z = 0; z < d.d; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
          at(z + 1, y + 1, x + 1) = v[(std::size_t(z) * d.h + y) * d.w + x] + at(z, y + 1, x + 1) + at(z + 1, y, x + 1) +
                                    at(z + 1, y + 1, x) - at(z, y, x + 1) - at(z, y + 1, x) - at(z + 1, y, x) +
                                    at(z, y, x);
        }
  }
  /// Sum over [z0,z1) x [y0,y1) x [x0,x1).
  double box(int z0, int z1, int y0, int y1, int x0, int x1) const {
    return at(z1, y1, x1) - at(z0, y1, x1) - at(z1, y0, x1) - at(z1, y1, x0) + at(z0, y0, x1) + at(z0, y1, x0) +
           at(z1, y0, x0) - at(z0, y0, x0);
  }

 private:
  double& at(int z, int y, int x) { return s_[(std::size_t(z) * h_ + y) * w_ + x]; }
  double at(int z, int y, int x) const { return s_[(std::size_t(z) * h_ + y) * w_ + x]; }
  int h_, w_;
  std::vector<double> s_;
};

inline double ssim_window(double n, double sa, double sb, double saa, double sbb, double sab, double c1, double c2) {
  const double ma = sa / n, mb = sb / n;
  const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace detail

/// Mean SSIM over every fully contained 7^3 uniform window (7x7 per z-slice
/// when `slicewise`). C1 = (0.01 peak)^2, C2 = (0.03 peak)^2, population moments.
template <class T>
double ssim(const BasicVolume<T>& pred, const BasicVolume<T>& ref, double peak = 1.0, bool slicewise = false) {
  detail::require_same(pred, ref, "ssim");
  const Dims d = ref.dims();
  const int k = kSsimWindow;
  if ((!slicewise && d.d < k) || d.h < k || d.w < k) {
    throw ValidationError("ssim needs at least " + std::to_string(k) + " voxels per windowed axis, got " + d.str());
  }
  const std::size_t n = ref.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = pred[i];
    b[i] = ref[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const detail::Integral ia(d, a), ib(d, b), iaa(d, aa), ibb(d, bb), iab(d, ab);
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const int kz = slicewise ? 1 : k;
  const double count = static_cast<double>(kz) * k * k;
  double total = 0.0;
  std::size_t windows = 0;
  for (int z = 0; z + kz <= d.d; ++z)
    for (int y = 0; y + k <= d.h; ++y)
      for (int x = 0; x + k <= d.w; ++x, ++windows) {
        auto box = [&](const detail::Integral& I) { return I.box(z, z + kz, y, y + k, x, x + k); };
        total += detail::ssim_window(count, box(ia), box(ib), box(iaa), box(ibb), box(iab), c1, c2);
      }
  return total / static_cast<double>(windows);
}

/// 2|A ∩ B| / (|A| + |B|) over voxels whose rounded value equals `label`.
template <class T>
double dice(const BasicVolume<T>& a, const BasicVolume<T>& b, int label = 1) {
  detail::require_same(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = std::lround(a[i]) == label, ib = std::lround(b[i]) == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  std::string sample;
  std::string method = "svin";
  double phase = 0.0;
  double mse = 0.0;
  double nrmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> dice;
};

template <class T>
MetricRow evaluate(const BasicVolume<T>& pred, const BasicVolume<T>& ref, const BasicVolume<T>* pred_mask = nullptr,
                   const BasicVolume<T>* ref_mask = nullptr, bool slicewise_ssim = false) {
  MetricRow r;
  r.mse = mse(pred, ref);
  r.nrmse = nrmse(pred, ref);
  r.psnr = psnr_from_mse(r.mse);
  r.ssim = ssim(pred, ref, 1.0, slicewise_ssim);
  if (pred_mask && ref_mask) r.dice = dice(*pred_mask, *ref_mask);
  return r;
}

namespace detail {

inline nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

inline std::string text(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

/// Per-sample/per-phase rows with per-(method, phase) and per-method means.
class MetricReport {
 public:
  void add(MetricRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricRow>& rows() const noexcept { return rows_; }

  struct Aggregate {
    std::string method;
    std::optional<double> phase;  ///< empty for the all-phase mean
    std::size_t count = 0;
    double mse = 0, nrmse = 0, psnr = 0, ssim = 0;
    std::optional<double> dice;
  };

  /// Means over samples for each (method, phase), then over all phases per method.
  std::vector<Aggregate> aggregates() const {
    std::vector<Aggregate> out;
    auto accumulate = [&](const std::string& method, std::optional<double> phase) {
      Aggregate a;
      a.method = method;
      a.phase = phase;
      double dice_sum = 0;
      std::size_t dice_n = 0;
      for (const auto& r : rows_) {
        if (r.method != method || (phase && r.phase != *phase)) continue;
        ++a.count;
        a.mse += r.mse;
        a.nrmse += r.nrmse;
        a.psnr += r.psnr;
        a.ssim += r.ssim;
        if (r.dice) {
          dice_sum += *r.dice;
          ++dice_n;
        }
      }
      if (a.count == 0) return;
      const double n = static_cast<double>(a.count);
      a.mse /= n;
      a.nrmse /= n;
      a.psnr /= n;
      a.ssim /= n;
      if (dice_n) a.dice = dice_sum / static_cast<double>(dice_n);
      out.push_back(a);
    };
    std::vector<std::string> methods;
    std::map<std::string, std::vector<double>> phases;
    for (const auto& r : rows_) {
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
      auto& p = phases[r.method];
      if (std::find(p.begin(), p.end(), r.phase) == p.end()) p.push_back(r.phase);
    }
    for (const auto& m : methods) {
      auto p = phases[m];
      std::sort(p.begin(), p.end());
      for (double t : p) accumulate(m, t);
      accumulate(m, std::nullopt);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rows_) {
      nlohmann::json j = {{"sample", r.sample}, {"method", r.method},         {"phase", r.phase},
                          {"mse", r.mse},       {"nrmse", r.nrmse},           {"psnr", detail::number(r.psnr)},
                          {"ssim", r.ssim}};
      if (r.dice) j["dice"] = *r.dice;
      rows.push_back(std::move(j));
    }
    nlohmann::json agg = nlohmann::json::array();
    for (const auto& a : aggregates()) {
      nlohmann::json j = {{"method", a.method}, {"count", a.count},         {"mse", a.mse},
                          {"nrmse", a.nrmse},   {"psnr", detail::number(a.psnr)}, {"ssim", a.ssim}};
      j["phase"] = a.phase ? nlohmann::json(*a.phase) : nlohmann::json("all");
      if (a.dice) j["dice"] = *a.dice;
      agg.push_back(std::move(j));
    }
    return {{"rows", rows}, {"aggregate", agg}};
  }

  /// One line per (sample, method, phase, metric); aggregates use sample "mean".
  std::string to_csv() const {
    std::ostringstream os;
    os << "sample,method,phase,metric,value\n";
    auto emit = [&](const std::string& sample, const std::string& method, const std::string& phase, const char* metric,
                    double v) { os << sample << ',' << method << ',' << phase << ',' << metric << ',' << detail::text(v) << '\n'; };
    for (const auto& r : rows_) {
      const std::string p = detail::text(r.phase);
      emit(r.sample, r.method, p, "mse", r.mse);
      emit(r.sample, r.method, p, "nrmse", r.nrmse);
      emit(r.sample, r.method, p, "psnr", r.psnr);
      emit(r.sample, r.method, p, "ssim", r.ssim);
      if (r.dice) emit(r.sample, r.method, p, "dice", *r.dice);
    }
    for (const auto& a : aggregates()) {
      const std::string p = a.phase ? detail::text(*a.phase) : "all";
      emit("mean", a.method, p, "mse", a.mse);
      emit("mean", a.method, p, "nrmse", a.nrmse);
      emit("mean", a.method, p, "psnr", a.psnr);
      emit("mean", a.method, p, "ssim", a.ssim);
      if (a.dice) emit("mean", a.method, p, "dice", *a.dice);
    }
    return os.str();
  }

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace svin::metrics
