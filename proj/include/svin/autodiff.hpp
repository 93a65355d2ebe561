#pragma once

// Minimal tape-free reverse-mode differentiation over Tensor values. Each
// operation returns a Var whose node remembers its inputs and an adjoint
// closure; `backward` walks the graph in reverse topological order. Graphs
// whose inputs need no gradient keep no closures, so inference is cheap.

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "svin/grid.hpp"
#include "svin/pyramid.hpp"

namespace svin {

/// How an elementwise penalty is collapsed to a scalar.
enum class Reduction { sum, mean };

namespace ad {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> adjoint;

  Tensor<T>& grad_buffer() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.channels(), value.dims());
    return grad;
  }
  bool wants(std::size_t i) const { return inputs[i]->requires_grad; }
  Tensor<T>& input_grad(std::size_t i) { return inputs[i]->grad_buffer(); }
  const Tensor<T>& input(std::size_t i) const { return inputs[i]->value; }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  int channels() const { return node_->value.channels(); }
  Dims dims() const { return node_->value.dims(); }
  T item() const { return node_->value[0]; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> adjoint) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->adjoint = std::move(adjoint);
  }
  return Var<T>(std::move(n));
}

/// Accumulates d(root)/d(x) into every reachable node that requires a gradient.
/// `root` must be a single-element tensor.
template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw ShapeError("backward needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->adjoint && !n->grad.empty()) n->adjoint(*n);
  }
}

template <class T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(1, Dims{1, 1, 1}, v);
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t i = 0; i < 2; ++i)
      if (n.wants(i)) n.input_grad(i) += n.grad;
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.wants(0)) n.input_grad(0) += n.grad;
    if (n.wants(1)) {
      auto& g = n.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!n.wants(k)) continue;
      auto& g = n.input_grad(k);
      const auto& other = n.input(1 - k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * other[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  Tensor<T> out = a.value();
  for (auto& v : out.span()) v = v > T(0) ? v : slope * v;
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& n) {
    auto& g = n.input_grad(0);
    const auto& x = n.input(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > T(0) ? n.grad[i] : slope * n.grad[i];
  });
}

/// Logistic squashing. Inputs are clamped to [-limit, limit] so the output
/// stays strictly inside (0,1) even in single precision.
template <class T>
Var<T> sigmoid(const Var<T>& a, T limit = T(12)) {
  Tensor<T> out = a.value();
  for (auto& v : out.span()) v = T(1) / (T(1) + std::exp(-std::clamp(v, -limit, limit)));
  return make_op<T>(std::move(out), {a}, [limit](Node<T>& n) {
    auto& g = n.input_grad(0);
    const auto& x = n.input(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] < -limit || x[i] > limit) continue;
      const T s = n.value[i];
      g[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Dims d = parts.front().dims();
  int channels = 0;
  for (const auto& p : parts) {
    if (!(p.dims() == d)) throw ShapeError("concat: grid mismatch " + d.str() + " vs " + p.dims().str());
    channels += p.channels();
  }
  Tensor<T> out(channels, d);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_op<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t len = n.input(k).size();
      if (n.wants(k)) {
        auto& g = n.input_grad(k);
        for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
      }
      off += len;
    }
  });
}

template <class T>
Var<T> slice(const Var<T>& a, int first, int count) {
  if (first < 0 || count <= 0 || first + count > a.channels()) throw ShapeError("slice: channel range out of bounds");
  const std::size_t plane = a.value().plane();
  Tensor<T> out(count, a.dims());
  std::copy(a.value().data() + first * plane, a.value().data() + (first + count) * plane, out.data());
  return make_op<T>(std::move(out), {a}, [first, plane](Node<T>& n) {
    auto& g = n.input_grad(0);
    T* dst = g.data() + first * plane;
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

/// Nearest-neighbour upsampling onto `target`, source index = target index / 2.
template <class T>
Var<T> upsample_nearest(const Var<T>& a, Dims target) {
  const Dims in = a.dims();
  if ((target.d + 1) / 2 > in.d || (target.h + 1) / 2 > in.h || (target.w + 1) / 2 > in.w) {
    throw ShapeError("upsample_nearest: target " + target.str() + " too large for " + in.str());
  }
  Tensor<T> out(a.channels(), target);
  for (int c = 0; c < a.channels(); ++c)
    for (int z = 0; z < target.d; ++z)
      for (int y = 0; y < target.h; ++y)
        for (int x = 0; x < target.w; ++x) out(c, z, y, x) = a.value()(c, z / 2, y / 2, x / 2);
  return make_op<T>(std::move(out), {a}, [target](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < n.grad.channels(); ++c)
      for (int z = 0; z < target.d; ++z)
        for (int y = 0; y < target.h; ++y)
          for (int x = 0; x < target.w; ++x) g(c, z / 2, y / 2, x / 2) += n.grad(c, z, y, x);
  });
}

/// Channel-constant tensor, e.g. a broadcast phase value.
template <class T>
Tensor<T> filled(int channels, Dims d, T v) {
  return Tensor<T>(channels, d, v);
}

// ---------------------------------------------------------------------------
// Grid operations

/// Differentiable trilinear warp of every channel of `src` by `field`.
template <class T>
Var<T> warp(const Var<T>& src, const Var<T>& field) {
  Tensor<T> out = kernel::warp(src.value(), field.value());
  return make_op<T>(std::move(out), {src, field}, [](Node<T>& n) {
    kernel::warp_backward(n.input(0), n.input(1), n.grad, n.wants(0) ? &n.input_grad(0) : nullptr,
                          n.wants(1) ? &n.input_grad(1) : nullptr);
  });
}

/// Trilinear field resampling onto `target`, vectors rescaled per axis.
template <class T>
Var<T> resample_field(const Var<T>& field, Dims target) {
  const Dims in = field.dims();
  Tensor<T> out = kernel::resample(field.value(), target);
  kernel::rescale_vectors(out, in, target);
  return make_op<T>(std::move(out), {field}, [in, target](Node<T>& n) {
    Tensor<T> g = n.grad;
    kernel::rescale_vectors(g, in, target);
    kernel::resample_backward(g, n.input_grad(0));
  });
}

template <class T>
Var<T> avg_pool2(const Var<T>& a) {
  return make_op<T>(kernel::avg_pool2(a.value()), {a},
                    [](Node<T>& n) { kernel::avg_pool2_backward(n.grad, n.input_grad(0)); });
}

/// Bi-directional blend with per-voxel weight gamma (ED side) and 1-gamma (ES side).
/// With `normalize`, the weighted sum is divided by its total weight plus eps.
template <class T>
Var<T> blend_weighted(const Var<T>& warped_ed, const Var<T>& warped_es, const Var<T>& gamma, T t, bool normalize,
                      T eps = T(1e-8)) {
  warped_ed.value().require_same(warped_es.value(), "blend_weighted");
  warped_ed.value().require_same(gamma.value(), "blend_weighted gamma");
  const auto& a = warped_ed.value();
  const auto& b = warped_es.value();
  const auto& g = gamma.value();
  Tensor<T> out(1, a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T wa = (T(1) - t) * g[i], wb = t * (T(1) - g[i]);
    const T num = wa * a[i] + wb * b[i];
    if (!normalize) {
      out[i] = num;
    } else if (wb == T(0)) {
      out[i] = a[i];  // keeps endpoints bit-exact
    } else if (wa == T(0)) {
      out[i] = b[i];
    } else {
      out[i] = num / (wa + wb + eps);
    }
  }
  return make_op<T>(std::move(out), {warped_ed, warped_es, gamma}, [t, normalize, eps](Node<T>& n) {
    const auto& a = n.input(0);
    const auto& b = n.input(1);
    const auto& g = n.input(2);
    Tensor<T>* ga = n.wants(0) ? &n.input_grad(0) : nullptr;
    Tensor<T>* gb = n.wants(1) ? &n.input_grad(1) : nullptr;
    Tensor<T>* gg = n.wants(2) ? &n.input_grad(2) : nullptr;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T go = n.grad[i];
      const T wa = (T(1) - t) * g[i], wb = t * (T(1) - g[i]);
      if (!normalize) {
        if (ga) (*ga)[i] += go * wa;
        if (gb) (*gb)[i] += go * wb;
        if (gg) (*gg)[i] += go * ((T(1) - t) * a[i] - t * b[i]);
      } else {
        const T den = wa + wb + eps;
        const T num = wa * a[i] + wb * b[i];
        if (ga) (*ga)[i] += go * wa / den;
        if (gb) (*gb)[i] += go * wb / den;
        if (gg) {
          const T dnum = (T(1) - t) * a[i] - t * b[i];
          const T dden = (T(1) - t) - t;
          (*gg)[i] += go * (dnum * den - num * dden) / (den * den);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses (all return single-element tensors)

/// Mean squared difference.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  a.value().require_same(b.value(), "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    s += d * d;
  }
  const double n = static_cast<double>(a.value().size());
  return make_op<T>(scalar_tensor<T>(static_cast<T>(s / n)), {a, b}, [n](Node<T>& node) {
    const T k = T(2) * node.grad[0] / static_cast<T>(n);
    const auto& x = node.input(0);
    const auto& y = node.input(1);
    for (std::size_t j = 0; j < 2; ++j) {
      if (!node.wants(j)) continue;
      auto& g = node.input_grad(j);
      const T sign = j == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * k * (x[i] - y[i]);
    }
  });
}

/// L1 of the forward-difference gradient of a (multi-component) field.
template <class T>
Var<T> gradient_l1(const Var<T>& field, Reduction r) {
  const Tensor<T> diffs = kernel::forward_differences(field.value());
  double s = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i) s += std::abs(static_cast<double>(diffs[i]));
  const T norm = r == Reduction::mean ? T(1) / static_cast<T>(diffs.size()) : T(1);
  return make_op<T>(scalar_tensor<T>(static_cast<T>(s) * norm), {field}, [norm](Node<T>& n) {
    Tensor<T> sg = kernel::forward_differences(n.input(0));
    const T k = n.grad[0] * norm;
    for (auto& v : sg.span()) v = v > T(0) ? k : (v < T(0) ? -k : T(0));
    kernel::forward_differences_backward(sg, n.input_grad(0));
  });
}

/// |a - target| for a single-element a.
template <class T>
Var<T> abs_diff(const Var<T>& a, T target) {
  const T d = a.item() - target;
  return make_op<T>(scalar_tensor<T>(std::abs(d)), {a}, [d](Node<T>& n) {
    n.input_grad(0)[0] += d > T(0) ? n.grad[0] : (d < T(0) ? -n.grad[0] : T(0));
  });
}

/// Spatial mean per channel, giving a (C, 1x1x1) tensor.
template <class T>
Var<T> global_avg_pool(const Var<T>& a) {
  const std::size_t plane = a.value().plane();
  Tensor<T> out(a.channels(), Dims{1, 1, 1});
  for (int c = 0; c < a.channels(); ++c) {
    T s = 0;
    for (const T v : a.value().channel(c)) s += v;
    out[c] = s / static_cast<T>(plane);
  }
  return make_op<T>(std::move(out), {a}, [plane](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < g.channels(); ++c) {
      const T v = n.grad[c] / static_cast<T>(plane);
      for (auto& x : g.channel(c)) x += v;
    }
  });
}

/// Fully connected layer on a (C, 1x1x1) input; weight is (out, 1x1xC).
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int in = x.channels(), out = weight.channels();
  if (weight.dims().voxels() != static_cast<std::size_t>(in) || bias.channels() != out) {
    throw ShapeError("dense: weight/bias do not match input width");
  }
  Tensor<T> y(out, Dims{1, 1, 1});
  for (int o = 0; o < out; ++o) {
    T s = bias.value()[o];
    for (int i = 0; i < in; ++i) s += weight.value()[o * in + i] * x.value()[i];
    y[o] = s;
  }
  return make_op<T>(std::move(y), {x, weight, bias}, [in, out](Node<T>& n) {
    const auto& xv = n.input(0);
    const auto& wv = n.input(1);
    for (int o = 0; o < out; ++o) {
      const T g = n.grad[o];
      if (n.wants(0))
        for (int i = 0; i < in; ++i) n.input_grad(0)[i] += g * wv[o * in + i];
      if (n.wants(1))
        for (int i = 0; i < in; ++i) n.input_grad(1)[o * in + i] += g * xv[i];
      if (n.wants(2)) n.input_grad(2)[o] += g;
    }
  });
}

/// Σ w_k · s_k over single-element terms.
template <class T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
  T s = 0;
  std::vector<Var<T>> inputs;
  std::vector<T> weights;
  for (const auto& [w, v] : terms) {
    if (v.value().size() != 1) throw ShapeError("weighted_sum needs scalar terms");
    s += w * v.item();
    inputs.push_back(v);
    weights.push_back(w);
  }
  return make_op<T>(scalar_tensor<T>(s), inputs, [weights](Node<T>& n) {
    for (std::size_t k = 0; k < weights.size(); ++k)
      if (n.wants(k)) n.input_grad(k)[0] += weights[k] * n.grad[0];
  });
}

}  // namespace ad
}  // namespace svin
