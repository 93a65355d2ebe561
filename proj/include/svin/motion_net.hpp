#pragma once

// Unsupervised multi-scale motion network. A shared encoder-decoder maps an
// ordered pair (I_i, I_j) to sampling fields at three pyramid levels such that
// warp(I_i^c, phi^c) approximates I_j^c. Each finer level adds a predicted
// residual to the upsampled coarser field.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svin/nn.hpp"
#include "svin/pyramid.hpp"
#include "svin/sample.hpp"

namespace svin {

struct MotionConfig {
  int base_width = 8;
  int encoder_depth = 3;
  double learning_rate = 1e-4;
  double similarity_weight = 1.0;
  double smoothness_weight = 0.01;
  /// Reduction applied to the smoothness term while training.
  Reduction smoothness_reduction = Reduction::mean;
  static constexpr int scales = kPyramidLevels;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(learning_rate > 0)) errs.push_back("motion.learning_rate must be > 0");
    if (base_width < 4) errs.push_back("motion.base_width must be >= 4");
    if (encoder_depth < 3) errs.push_back("motion.encoder_depth must be >= 3");
    if (!(similarity_weight >= 0)) errs.push_back("motion.similarity_weight must be >= 0");
    if (!(smoothness_weight >= 0)) errs.push_back("motion.smoothness_weight must be >= 0");
    return errs;
  }
};

template <class T>
class MotionNet {
 public:
  MotionNet() = default;
  MotionNet(const MotionConfig& config, std::uint64_t seed) : config_(config) {
    if (auto errs = config.validate(); !errs.empty()) throw ValidationError(errs.front());
    std::mt19937_64 rng(seed);
    const int w = config.base_width, depth = config.encoder_depth;
    nn::add_conv(params_, "enc0", 2, w, rng);
    for (int k = 1; k <= depth; ++k) nn::add_conv(params_, "enc" + std::to_string(k), k == 1 ? w : 2 * w, 2 * w, rng);
    for (int k = depth - 1; k >= 0; --k) {
      const int skip = k == 0 ? w : 2 * w;
      const int out = k == 0 ? w : 2 * w;
      nn::add_conv(params_, "dec" + std::to_string(k), 2 * w + skip, out, rng);
      if (k <= 2) nn::add_conv(params_, "head" + std::to_string(3 - k), out, 3, rng, /*zero_init=*/true);
    }
  }
  MotionNet(const MotionConfig& config, nn::ParamSet<T> params) : config_(config), params_(std::move(params)) {}

  const MotionConfig& config() const noexcept { return config_; }
  nn::ParamSet<T>& params() noexcept { return params_; }
  const nn::ParamSet<T>& params() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  static std::size_t parameter_count(const MotionConfig& config) { return MotionNet(config, 0).parameter_count(); }

  template <class U>
  MotionNet<U> cast() const {
    return MotionNet<U>(config_, params_.template cast<U>());
  }

 private:
  MotionConfig config_{};
  nn::ParamSet<T> params_;
};

using MotionParams = MotionNet<float>;

namespace detail {

inline void require_same_grid(Dims a, Dims b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": grid mismatch " + a.str() + " vs " + b.str());
}

}  // namespace detail

/// Differentiable forward pass; returns the level-1..3 fields (index 0 = coarsest).
template <class T>
std::array<ad::Var<T>, 3> motion_forward_graph(const MotionNet<T>& net, const ad::Var<T>& moving,
                                                const ad::Var<T>& fixed) {
  using ad::Var;
  detail::require_same_grid(moving.dims(), fixed.dims(), "motion_forward");
  require_pyramid_dims(moving.dims());
  const auto& p = net.params();
  const int depth = net.config().encoder_depth;

  std::vector<Var<T>> enc;
  enc.push_back(ad::leaky_relu(nn::conv(p, "enc0", ad::concat<T>({moving, fixed}), 1)));
  for (int k = 1; k <= depth; ++k) enc.push_back(ad::leaky_relu(nn::conv(p, "enc" + std::to_string(k), enc.back(), 2)));

  std::array<Var<T>, 3> fields;
  Var<T> h = enc[static_cast<std::size_t>(depth)];
  for (int k = depth - 1; k >= 0; --k) {
    const Var<T>& skip = enc[static_cast<std::size_t>(k)];
    h = ad::leaky_relu(nn::conv(p, "dec" + std::to_string(k), ad::concat<T>({ad::upsample_nearest(h, skip.dims()), skip})));
    if (k > 2) continue;
    const int level = 3 - k;
    Var<T> residual = nn::conv(p, "head" + std::to_string(level), h);
    fields[level - 1] = level == 1 ? residual : ad::add(ad::resample_field(fields[level - 2], skip.dims()), residual);
  }
  return fields;
}

/// D_theta(I_i, I_j): fields at levels 1..3 mapping I_i onto I_j.
template <class T>
Pyramid<BasicVectorField<T>> motion_forward(const MotionNet<T>& net, const BasicVolume<T>& moving,
                                            const BasicVolume<T>& fixed) {
  detail::require_same_grid(moving.dims(), fixed.dims(), "motion_forward");
  require_pyramid_dims(moving.dims());
  auto vars = motion_forward_graph(net, ad::Var<T>::constant(moving.tensor()), ad::Var<T>::constant(fixed.tensor()));
  std::array<BasicVectorField<T>, 3> out;
  for (int c = 0; c < 3; ++c) {
    const Dims d = vars[c].dims();
    const Dims full = moving.dims();
    const Spacing s = moving.spacing();
    out[c] = BasicVectorField<T>(vars[c].value(), Spacing{s.z * full.d / d.d, s.y * full.h / d.h, s.x * full.w / d.w});
  }
  return Pyramid<BasicVectorField<T>>(std::move(out));
}

namespace detail {

template <class G>
void require_pyramid_shape(const std::array<G, 3>& levels, const char* what) {
  for (int c = 0; c < 2; ++c) {
    const Dims fine = levels[c + 1].dims();
    if (!(levels[c].dims() == Dims{(fine.d + 1) / 2, (fine.h + 1) / 2, (fine.w + 1) / 2})) {
      throw ShapeError(std::string(what) + ": level dims do not form a factor-2 pyramid");
    }
  }
}

}  // namespace detail

/// Σ_c ||∇φ^c||_1 over the three levels.
template <class T>
double smoothness_loss(const Pyramid<BasicVectorField<T>>& fields, Reduction r = Reduction::sum) {
  detail::require_pyramid_shape(std::array{fields.level(1), fields.level(2), fields.level(3)}, "smoothness_loss");
  double s = 0.0;
  for (int c = 1; c <= 3; ++c) {
    const Tensor<T> g = spatial_gradient(fields.level(c));
    s += r == Reduction::mean ? l1_norm(g) / static_cast<double>(g.size()) : l1_norm(g);
  }
  return s;
}

/// Σ_c mean((warped^c - target^c)^2).
template <class T>
double similarity_loss(const Pyramid<BasicVolume<T>>& warped, const Pyramid<BasicVolume<T>>& targets) {
  double s = 0.0;
  for (int c = 1; c <= 3; ++c) {
    const auto& a = warped.level(c).tensor();
    const auto& b = targets.level(c).tensor();
    a.require_same(b, "similarity_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += d * d;
    }
    s += acc / static_cast<double>(a.size());
  }
  return s;
}

/// Differentiable pair objective: weighted similarity plus smoothness.
template <class T>
struct MotionObjective {
  ad::Var<T> total;
  double similarity = 0.0;
  double smoothness = 0.0;
};

template <class T>
MotionObjective<T> motion_objective(const MotionNet<T>& net, const Pyramid<BasicVolume<T>>& moving,
                                    const Pyramid<BasicVolume<T>>& fixed) {
  using ad::Var;
  const auto& cfg = net.config();
  auto fields = motion_forward_graph(net, Var<T>::constant(moving.finest().tensor()),
                                     Var<T>::constant(fixed.finest().tensor()));
  std::vector<std::pair<T, Var<T>>> terms;
  MotionObjective<T> obj;
  for (int c = 1; c <= 3; ++c) {
    Var<T> warped = ad::warp(Var<T>::constant(moving.level(c).tensor()), fields[c - 1]);
    Var<T> sim = ad::mse(warped, Var<T>::constant(fixed.level(c).tensor()));
    Var<T> smooth = ad::gradient_l1(fields[c - 1], cfg.smoothness_reduction);
    obj.similarity += sim.item();
    obj.smoothness += smooth.item();
    terms.emplace_back(static_cast<T>(cfg.similarity_weight), sim);
    terms.emplace_back(static_cast<T>(cfg.smoothness_weight), smooth);
  }
  obj.total = ad::weighted_sum(terms);
  return obj;
}

struct TrainOptions {
  long steps = 1000;
  std::uint64_t seed = 0;
  /// Called after every optimizer step with (step index, total loss).
  std::function<void(long, double)> on_step;
};

/// Parameters, optimizer moments and history; enough to resume bit-exactly.
template <class Net>
struct TrainState {
  Net net;
  nn::Adam<float> optimizer;
  std::vector<double> history;
  long step = 0;
  std::uint64_t seed = 0;
};

using MotionTrainState = TrainState<MotionParams>;

/// Minimizes the motion objective over (ED, ES) pairs in both orderings with Adam.
/// Passing `resume` continues its step numbering, schedule and optimizer state.
inline MotionTrainState train_motion(std::span<const PhaseSample> dataset, const MotionConfig& config,
                                     const TrainOptions& options, std::optional<MotionTrainState> resume = std::nullopt) {
  if (dataset.empty()) throw ValidationError("train_motion: dataset is empty");
  if (auto errs = config.validate(); !errs.empty()) throw ValidationError(errs.front());
  std::vector<Pyramid<Volume>> ed, es;
  for (const auto& s : dataset) {
    s.validate();
    ed.push_back(build_pyramid(s.ed));
    es.push_back(build_pyramid(s.es));
  }

  MotionTrainState st;
  if (resume) {
    st = std::move(*resume);
  } else {
    st.net = MotionParams(config, options.seed);
    st.optimizer = nn::Adam<float>(st.net.params());
    st.seed = options.seed;
  }
  const std::size_t items = 2 * dataset.size();
  for (; st.step < options.steps; ++st.step) {
    const std::size_t item = scheduled_item(st.seed, st.step, items);
    const std::size_t idx = item / 2;
    const bool reversed = item % 2 == 1;
    st.net.params().zero_grad();
    std::optional<MotionObjective<float>> obj;
    try {
      obj = reversed ? motion_objective(st.net, es[idx], ed[idx]) : motion_objective(st.net, ed[idx], es[idx]);
    } catch (const ValidationError& e) {
      // A non-finite predicted field is divergence surfacing inside warp.
      throw TrainingError(std::string("train_motion: ") + e.what(), st.step);
    }
    const double loss = obj->total.item();
    if (!std::isfinite(loss)) throw TrainingError("train_motion: non-finite loss", st.step);
    ad::backward(obj->total);
    st.optimizer.step(st.net.params(), config.learning_rate);
    st.history.push_back(loss);
    if (options.on_step) options.on_step(st.step, loss);
  }
  return st;
}

}  // namespace svin
