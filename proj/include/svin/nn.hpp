#pragma once

// Learnable building blocks: 3x3x3 convolution (im2col + GEMM), named
// parameter sets with deep-copy semantics, and the Adam optimizer.

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "svin/autodiff.hpp"

namespace svin::nn {

using ad::Var;

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Dims conv_out_dims(Dims in, int stride) {
  auto f = [stride](int n) { return (n - 1) / stride + 1; };
  return {f(in.d), f(in.h), f(in.w)};
}

/// Unfolds 3x3x3 neighbourhoods (zero padding 1) into a (C*27) x N matrix.
template <class T>
void im2col(const Tensor<T>& in, int stride, Dims out, std::vector<T>& cols) {
  const Dims d = in.dims();
  const std::size_t n = out.voxels();
  cols.assign(static_cast<std::size_t>(in.channels()) * 27 * n, T(0));
  T* row = cols.data();
  for (int c = 0; c < in.channels(); ++c) {
    const T* plane = in.data() + c * in.plane();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx, row += n) {
          T* dst = row;
          for (int oz = 0; oz < out.d; ++oz) {
            const int iz = oz * stride + kz - 1;
            if (iz < 0 || iz >= d.d) {
              dst += static_cast<std::size_t>(out.h) * out.w;
              continue;
            }
            for (int oy = 0; oy < out.h; ++oy, dst += out.w) {
              const int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= d.h) continue;
              const T* src = plane + (static_cast<std::size_t>(iz) * d.h + iy) * d.w;
              for (int ox = 0; ox < out.w; ++ox) {
                const int ix = ox * stride + kx - 1;
                if (ix >= 0 && ix < d.w) dst[ox] = src[ix];
              }
            }
          }
        }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
template <class T>
void col2im(const T* cols, int stride, Dims out, Tensor<T>& grad_in) {
  const Dims d = grad_in.dims();
  const std::size_t n = out.voxels();
  const T* row = cols;
  for (int c = 0; c < grad_in.channels(); ++c) {
    T* plane = grad_in.data() + c * grad_in.plane();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx, row += n) {
          const T* src = row;
          for (int oz = 0; oz < out.d; ++oz) {
            const int iz = oz * stride + kz - 1;
            if (iz < 0 || iz >= d.d) {
              src += static_cast<std::size_t>(out.h) * out.w;
              continue;
            }
            for (int oy = 0; oy < out.h; ++oy, src += out.w) {
              const int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= d.h) continue;
              T* dst = plane + (static_cast<std::size_t>(iz) * d.h + iy) * d.w;
              for (int ox = 0; ox < out.w; ++ox) {
                const int ix = ox * stride + kx - 1;
                if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
              }
            }
          }
        }
  }
}

}  // namespace detail

/// 3x3x3 convolution with zero padding 1. Weight is (Cout, 1x1x(Cin*27)),
/// bias is (Cout, 1x1x1). Stride 2 halves each extent (rounding up).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride) {
  using Mat = detail::RowMat<T>;
  const int cin = x.channels(), cout = weight.channels();
  const int k = cin * 27;
  if (weight.dims().voxels() != static_cast<std::size_t>(k) || bias.channels() != cout) {
    throw ShapeError("conv3d: weight " + weight.value().shape_str() + " does not fit input " + x.value().shape_str());
  }
  const Dims out_dims = detail::conv_out_dims(x.dims(), stride);
  const auto n = static_cast<Eigen::Index>(out_dims.voxels());
  std::vector<T> cols;
  detail::im2col(x.value(), stride, out_dims, cols);
  Tensor<T> out(cout, out_dims);
  Eigen::Map<Mat> y(out.data(), cout, n);
  y.noalias() = Eigen::Map<const Mat>(weight.value().data(), cout, k) * Eigen::Map<const Mat>(cols.data(), k, n);
  for (int o = 0; o < cout; ++o) y.row(o).array() += bias.value()[o];

  return ad::make_op<T>(std::move(out), {x, weight, bias}, [stride, cin, cout, k, n, out_dims](ad::Node<T>& node) {
    Eigen::Map<const Mat> gy(node.grad.data(), cout, n);
    if (node.wants(1)) {
      std::vector<T> cols;
      detail::im2col(node.input(0), stride, out_dims, cols);
      Eigen::Map<Mat> gw(node.input_grad(1).data(), cout, k);
      gw.noalias() += gy * Eigen::Map<const Mat>(cols.data(), k, n).transpose();
    }
    if (node.wants(2)) {
      auto& gb = node.input_grad(2);
      // Plain loop: Eigen's vectorized reduction order depends on buffer alignment.
      for (int o = 0; o < cout; ++o) {
        const T* row = node.grad.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(n);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) acc += row[i];
        gb[o] += static_cast<T>(acc);
      }
    }
    if (node.wants(0)) {
      Mat gcols(k, n);
      gcols.noalias() = Eigen::Map<const Mat>(node.input(1).data(), cout, k).transpose() * gy;
      detail::col2im(gcols.data(), stride, out_dims, node.input_grad(0));
    }
    (void)cin;
  });
}

/// Ordered collection of named learnable tensors. Copies are deep.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& o) {
    for (const auto& [name, v] : o.entries_) add(name, v.value());
  }
  ParamSet& operator=(const ParamSet& o) {
    if (this != &o) {
      ParamSet tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Var<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ValidationError("duplicate parameter block " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Var<T>::leaf(std::move(init), true));
    return entries_.back().second;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter block " + name);
    return entries_[it->second].second;
  }
  Var<T>& get(const std::string& name) {
    return const_cast<Var<T>&>(static_cast<const ParamSet&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Var<T>>>& entries() noexcept { return entries_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Freshly detached copy sharing no nodes, optionally in another precision.
  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, v] : entries_) out.add(name, v.value().template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].first != b.entries_[i].first) return false;
      if (!(a.entries_[i].second.value() == b.entries_[i].second.value())) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Registers "<name>.w" (He-normal) and "<name>.b" (zero) for a 3x3x3 conv.
/// A zero-initialized layer emits exactly its (zero) bias.
template <class T>
void add_conv(ParamSet<T>& p, const std::string& name, int cin, int cout, std::mt19937_64& rng, bool zero_init = false) {
  Tensor<T> w(cout, Dims{1, 1, cin * 27});
  if (!zero_init) {
    const double stddev = std::sqrt(2.0 / ((1.0 + 0.2 * 0.2) * cin * 27));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : w.span()) v = static_cast<T>(dist(rng));
  }
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", Tensor<T>(cout, Dims{1, 1, 1}));
}

template <class T>
void add_dense(ParamSet<T>& p, const std::string& name, int in, int out, std::mt19937_64& rng, bool zero_init = false) {
  Tensor<T> w(out, Dims{1, 1, in});
  if (!zero_init) {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in));
    for (auto& v : w.span()) v = static_cast<T>(dist(rng));
  }
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", Tensor<T>(out, Dims{1, 1, 1}));
}

template <class T>
Var<T> conv(const ParamSet<T>& p, const std::string& name, const Var<T>& x, int stride = 1) {
  return conv3d(x, p.get(name + ".w"), p.get(name + ".b"), stride);
}

/// Adam with bias correction. Moment buffers are keyed by parameter order.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamSet<T>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, v] : params.entries()) {
      m_.emplace_back(v.channels(), v.dims());
      v_.emplace_back(v.channels(), v.dims());
    }
  }

  void step(ParamSet<T>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = params.entries();
    if (entries.size() != m_.size()) throw ShapeError("optimizer state does not match parameter set");
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Var<T>& p = entries[k].second;
      const Tensor<T>& g = p.grad();
      if (g.empty()) continue;
      Tensor<T>& val = p.mutable_value();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
        v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
        const double mh = m[i] / c1, vh = v[i] / c2;
        val[i] = static_cast<T>(val[i] - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  long steps() const noexcept { return t_; }
  void set_steps(long t) noexcept { t_ = t; }
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace svin::nn
