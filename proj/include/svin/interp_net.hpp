#pragma once

// Sequential volumetric interpolation network. Given ED/ES volumes, the frozen
// motion network's bi-directional fields and a phase t, it refines the
// closed-form intermediate-field scaffold into per-scale intermediate volumes.
// A regression head maps the learned field residuals back to a phase estimate,
// tying the refinement to the organ's motion law.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svin/motion_net.hpp"
#include "svin/synthesis.hpp"

namespace svin {

struct LossWeights {
  double similar = 500.0;
  double regression = 1.0;
  double bidirectional = 50.0;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(similar >= 0)) errs.push_back("weights.similar must be >= 0");
    if (!(regression >= 0)) errs.push_back("weights.regression must be >= 0");
    if (!(bidirectional >= 0)) errs.push_back("weights.bidirectional must be >= 0");
    return errs;
  }
};

struct InterpConfig {
  int base_width = 8;
  double learning_rate = 1e-4;
  LossWeights weights{};
  /// Reduction applied to the bi-directional regularizer while training.
  Reduction bidirectional_reduction = Reduction::mean;
  /// Scaffold from the bi-directionally consistent fields (true) or the linear ones.
  bool consistent_scaffold = true;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs = weights.validate();
    if (!(learning_rate > 0)) errs.push_back("interp.learning_rate must be > 0");
    if (base_width < 4) errs.push_back("interp.base_width must be >= 4");
    return errs;
  }
};

/// Channels emitted by each per-scale head.
enum HeadChannel : int { kCorrection = 0, kGammaLogit = 1, kResidualEd = 2, kResidualEs = 5, kHeadChannels = 8 };
inline constexpr int kInterpInputChannels = 11;

template <class T>
class InterpNet {
 public:
  InterpNet() = default;
  InterpNet(const InterpConfig& config, std::uint64_t seed) : config_(config) {
    if (auto errs = config.validate(); !errs.empty()) throw ValidationError(errs.front());
    std::mt19937_64 rng(seed);
    const int w = config.base_width;
    nn::add_conv(params_, "enc0", kInterpInputChannels, w, rng);
    nn::add_conv(params_, "enc1", w, 2 * w, rng);
    nn::add_conv(params_, "enc2", 2 * w, 2 * w, rng);
    nn::add_conv(params_, "enc3", 2 * w, 2 * w, rng);
    for (int k = 2; k >= 0; --k) {
      const int skip = k == 0 ? w : 2 * w;
      const int out = k == 0 ? w : 2 * w;
      nn::add_conv(params_, "dec" + std::to_string(k), 2 * w + skip, out, rng);
      nn::add_conv(params_, "head" + std::to_string(3 - k), out, kHeadChannels, rng, /*zero_init=*/true);
    }
    nn::add_conv(params_, "reg1", 6, w, rng);
    nn::add_conv(params_, "reg2", w, 2 * w, rng);
    nn::add_conv(params_, "reg3", 2 * w, 2 * w, rng);
    nn::add_dense(params_, "reg_out", 2 * w, 1, rng, /*zero_init=*/true);
  }
  InterpNet(const InterpConfig& config, nn::ParamSet<T> params) : config_(config), params_(std::move(params)) {}

  const InterpConfig& config() const noexcept { return config_; }
  nn::ParamSet<T>& params() noexcept { return params_; }
  const nn::ParamSet<T>& params() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  template <class U>
  InterpNet<U> cast() const {
    return InterpNet<U>(config_, params_.template cast<U>());
  }

 private:
  InterpConfig config_{};
  nn::ParamSet<T> params_;
};

using InterpParams = InterpNet<float>;

/// Intermediate-phase prediction with every quantity the losses need.
template <class T>
struct InterpGraph {
  std::array<ad::Var<T>, 3> volumes;   ///< refined intermediate per level (index 0 = coarsest)
  std::array<ad::Var<T>, 3> gamma;     ///< gamma_ED per level
  std::array<ad::Var<T>, 3> from_ed;   ///< refined phi_{ED->t} per level
  std::array<ad::Var<T>, 3> from_es;   ///< refined phi_{ES->t} per level
  ad::Var<T> phase;                    ///< regressed t~
};

template <class T>
struct BasicInterpOutput {
  Pyramid<BasicVolume<T>> volumes;
  BasicWeightMap<T> gamma;
  FieldPair<T> fields;
  double phase = 0.0;
};

using InterpOutput = BasicInterpOutput<float>;

/// Regression head R: residual fields (6 channels) -> scalar phase.
template <class T>
ad::Var<T> regression_graph(const InterpNet<T>& net, const ad::Var<T>& residual_ed, const ad::Var<T>& residual_es) {
  const auto& p = net.params();
  ad::Var<T> h = ad::concat<T>({residual_ed, residual_es});
  h = ad::leaky_relu(nn::conv(p, "reg1", h, 2));
  h = ad::leaky_relu(nn::conv(p, "reg2", h, 2));
  h = ad::leaky_relu(nn::conv(p, "reg3", h, 2));
  return ad::dense(ad::global_avg_pool(h), p.get("reg_out.w"), p.get("reg_out.b"));
}

/// t~ = R(delta_ED, delta_ES) where the deltas are the refined fields minus the
/// linear scaffold t*phi_fwd and (1-t)*phi_bwd.
template <class T>
double regression_forward(const InterpNet<T>& net, const BasicVectorField<T>& residual_ed,
                          const BasicVectorField<T>& residual_es) {
  detail::require_matching(residual_ed.dims(), residual_es.dims(), "regression_forward");
  using ad::Var;
  return regression_graph(net, Var<T>::constant(residual_ed.tensor()), Var<T>::constant(residual_es.tensor())).item();
}

namespace detail {

inline void require_open_phase(double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw DomainError("interpolation phase must lie strictly inside (0,1), got " + std::to_string(t));
  }
}

}  // namespace detail

/// Differentiable interpolation forward pass at phase t.
template <class T>
InterpGraph<T> interp_forward_graph(const InterpNet<T>& net, const Pyramid<BasicVolume<T>>& ed,
                                    const Pyramid<BasicVolume<T>>& es, const Pyramid<BasicVectorField<T>>& fwd,
                                    const Pyramid<BasicVectorField<T>>& bwd, double t) {
  using ad::Var;
  detail::require_open_phase(t);
  const PhaseIndex phase(t);
  const T tt = static_cast<T>(t);
  for (int c = 1; c <= 3; ++c) {
    detail::require_matching(ed.level(c).dims(), es.level(c).dims(), "interp_forward");
    detail::require_matching(ed.level(c).dims(), fwd.level(c).dims(), "interp_forward fwd");
    detail::require_matching(ed.level(c).dims(), bwd.level(c).dims(), "interp_forward bwd");
  }
  std::array<FieldPair<T>, 3> scaffold;
  for (int c = 1; c <= 3; ++c) {
    scaffold[c - 1] = net.config().consistent_scaffold
                          ? consistent_intermediate_fields(fwd.level(c), bwd.level(c), phase)
                          : linear_intermediate_fields(fwd.level(c), bwd.level(c), phase);
  }

  const auto& s3 = scaffold[2];
  const Dims full = ed.finest().dims();
  const Var<T> x = ad::concat<T>({
      Var<T>::constant(ed.finest().tensor()),
      Var<T>::constant(es.finest().tensor()),
      Var<T>::constant(kernel::warp(ed.finest().tensor(), s3.from_ed.tensor())),
      Var<T>::constant(kernel::warp(es.finest().tensor(), s3.from_es.tensor())),
      Var<T>::constant(s3.from_ed.tensor()),
      Var<T>::constant(s3.from_es.tensor()),
      Var<T>::constant(ad::filled<T>(1, full, tt)),
  });

  const auto& p = net.params();
  std::vector<Var<T>> enc;
  enc.push_back(ad::leaky_relu(nn::conv(p, "enc0", x, 1)));
  for (int k = 1; k <= 3; ++k) enc.push_back(ad::leaky_relu(nn::conv(p, "enc" + std::to_string(k), enc.back(), 2)));

  InterpGraph<T> g;
  Var<T> h = enc[3];
  for (int k = 2; k >= 0; --k) {
    const Var<T>& skip = enc[static_cast<std::size_t>(k)];
    h = ad::leaky_relu(nn::conv(p, "dec" + std::to_string(k), ad::concat<T>({ad::upsample_nearest(h, skip.dims()), skip})));
    const int level = 3 - k;
    const std::size_t i = static_cast<std::size_t>(level - 1);
    const Var<T> head = nn::conv(p, "head" + std::to_string(level), h);
    g.from_ed[i] = ad::add(Var<T>::constant(scaffold[i].from_ed.tensor()), ad::slice(head, kResidualEd, 3));
    g.from_es[i] = ad::add(Var<T>::constant(scaffold[i].from_es.tensor()), ad::slice(head, kResidualEs, 3));
    g.gamma[i] = ad::sigmoid(ad::slice(head, kGammaLogit, 1));
    const Var<T> warped_ed = ad::warp(Var<T>::constant(ed.level(level).tensor()), g.from_ed[i]);
    const Var<T> warped_es = ad::warp(Var<T>::constant(es.level(level).tensor()), g.from_es[i]);
    g.volumes[i] = ad::add(ad::blend_weighted(warped_ed, warped_es, g.gamma[i], tt, /*normalize=*/true),
                           ad::slice(head, kCorrection, 1));
  }

  BasicVectorField<T> lin_ed = fwd.finest();
  lin_ed.tensor() *= tt;
  BasicVectorField<T> lin_es = bwd.finest();
  lin_es.tensor() *= T(1) - tt;
  g.phase = regression_graph(net, ad::sub(g.from_ed[2], Var<T>::constant(lin_ed.tensor())),
                             ad::sub(g.from_es[2], Var<T>::constant(lin_es.tensor())));
  return g;
}

template <class T>
BasicInterpOutput<T> interp_forward(const InterpNet<T>& net, const BasicVolume<T>& ed, const BasicVolume<T>& es,
                                    const Pyramid<BasicVectorField<T>>& fwd, const Pyramid<BasicVectorField<T>>& bwd,
                                    double t) {
  detail::require_open_phase(t);
  detail::require_matching(ed.dims(), es.dims(), "interp_forward");
  const auto ed_p = build_pyramid(ed);
  const auto es_p = build_pyramid(es);
  const InterpGraph<T> g = interp_forward_graph(net, ed_p, es_p, fwd, bwd, t);
  std::array<BasicVolume<T>, 3> vols;
  for (int c = 1; c <= 3; ++c) vols[c - 1] = BasicVolume<T>(g.volumes[c - 1].value(), ed_p.level(c).spacing());
  return {Pyramid<BasicVolume<T>>(std::move(vols)), BasicWeightMap<T>(BasicVolume<T>(g.gamma[2].value(), ed.spacing())),
          FieldPair<T>{BasicVectorField<T>(g.from_ed[2].value(), ed.spacing()),
                       BasicVectorField<T>(g.from_es[2].value(), ed.spacing())},
          static_cast<double>(g.phase.item())};
}

// ---------------------------------------------------------------------------
// Loss suite

/// Σ_c Σ_k mean((pred_k^c - truth_k^c)^2).
template <class T>
double loss_similar(std::span<const Pyramid<BasicVolume<T>>> pred, std::span<const Pyramid<BasicVolume<T>>> truth) {
  if (pred.size() != truth.size()) {
    throw ValidationError("loss_similar: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(truth.size()) + " references");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) s += similarity_loss(pred[k], truth[k]);
  return s;
}

/// Σ_k |t~_k - t_k|.
inline double loss_regression(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw ValidationError("loss_regression: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) s += std::abs(predicted[k] - truth[k]);
  return s;
}

/// Σ_c ||∇φ_ED^c + ∇φ_ES^c||_1.
template <class T>
double loss_bidirectional(const Pyramid<BasicVectorField<T>>& from_ed, const Pyramid<BasicVectorField<T>>& from_es,
                          Reduction r = Reduction::sum) {
  double s = 0.0;
  for (int c = 1; c <= 3; ++c) {
    from_ed.level(c).tensor().require_same(from_es.level(c).tensor(), "loss_bidirectional");
    Tensor<T> g = spatial_gradient(from_ed.level(c));
    g += spatial_gradient(from_es.level(c));
    s += r == Reduction::mean ? l1_norm(g) / static_cast<double>(g.size()) : l1_norm(g);
  }
  return s;
}

struct LossParts {
  double similar = 0.0;
  double regression = 0.0;
  double bidirectional = 0.0;
};

/// λ_s L_similar + λ_r L_r + λ_g L_g.
inline double loss_total(const LossParts& parts, const LossWeights& w) {
  if (!std::isfinite(parts.similar)) throw ValidationError("loss_total: similar term is not finite");
  if (!std::isfinite(parts.regression)) throw ValidationError("loss_total: regression term is not finite");
  if (!std::isfinite(parts.bidirectional)) throw ValidationError("loss_total: bidirectional term is not finite");
  return w.similar * parts.similar + w.regression * parts.regression + w.bidirectional * parts.bidirectional;
}

/// Differentiable per-phase objective; `parts` receives the unweighted terms.
template <class T>
ad::Var<T> interp_objective(const InterpGraph<T>& g, const Pyramid<BasicVolume<T>>& truth, double t,
                            const InterpConfig& cfg, LossParts* parts = nullptr) {
  using ad::Var;
  std::vector<std::pair<T, Var<T>>> terms;
  LossParts local;
  for (int c = 1; c <= 3; ++c) {
    const Var<T> sim = ad::mse(g.volumes[c - 1], Var<T>::constant(truth.level(c).tensor()));
    const Var<T> bid = ad::gradient_l1(ad::add(g.from_ed[c - 1], g.from_es[c - 1]), cfg.bidirectional_reduction);
    local.similar += sim.item();
    local.bidirectional += bid.item();
    terms.emplace_back(static_cast<T>(cfg.weights.similar), sim);
    terms.emplace_back(static_cast<T>(cfg.weights.bidirectional), bid);
  }
  const Var<T> reg = ad::abs_diff(g.phase, static_cast<T>(t));
  local.regression = reg.item();
  terms.emplace_back(static_cast<T>(cfg.weights.regression), reg);
  if (parts) {
    parts->similar += local.similar;
    parts->regression += local.regression;
    parts->bidirectional += local.bidirectional;
  }
  return ad::weighted_sum(terms);
}

using InterpTrainState = TrainState<InterpParams>;

/// Frozen-motion context of one sample, reused across training steps.
struct PreparedSample {
  Pyramid<Volume> ed, es;
  Pyramid<VectorField> fwd, bwd;
  std::vector<double> phases;
  std::vector<Pyramid<Volume>> truth;
};

inline PreparedSample prepare_sample(const PhaseSample& s, const MotionParams& motion) {
  s.validate();
  PreparedSample p{build_pyramid(s.ed), build_pyramid(s.es), motion_forward(motion, s.ed, s.es),
                   motion_forward(motion, s.es, s.ed), {}, {}};
  for (const auto& f : s.intermediates) {
    p.phases.push_back(f.t);
    p.truth.push_back(build_pyramid(f.volume));
  }
  return p;
}

/// Trains on samples whose motion fields were computed up front.
inline InterpTrainState train_interp(std::span<const PreparedSample> prepared, const InterpConfig& config,
                                     const TrainOptions& options, std::optional<InterpTrainState> resume = std::nullopt) {
  if (prepared.empty()) throw ValidationError("train_interp: dataset is empty");
  if (auto errs = config.validate(); !errs.empty()) throw ValidationError(errs.front());
  for (const auto& p : prepared) {
    if (p.phases.empty()) throw ValidationError("train_interp: a sample has no intermediates");
  }

  InterpTrainState st;
  if (resume) {
    st = std::move(*resume);
  } else {
    st.net = InterpParams(config, options.seed);
    st.optimizer = nn::Adam<float>(st.net.params());
    st.seed = options.seed;
  }
  for (; st.step < options.steps; ++st.step) {
    const PreparedSample& ps = prepared[scheduled_item(st.seed, st.step, prepared.size())];
    st.net.params().zero_grad();
    double loss = 0.0;
    for (std::size_t k = 0; k < ps.phases.size(); ++k) {
      std::optional<ad::Var<float>> obj;
      try {
        const auto g = interp_forward_graph(st.net, ps.ed, ps.es, ps.fwd, ps.bwd, ps.phases[k]);
        obj = interp_objective(g, ps.truth[k], ps.phases[k], config);
      } catch (const ValidationError& e) {
        throw TrainingError(std::string("train_interp: ") + e.what(), st.step);
      }
      if (!std::isfinite(obj->item())) throw TrainingError("train_interp: non-finite loss", st.step);
      loss += obj->item();
      ad::backward(*obj);
    }
    st.optimizer.step(st.net.params(), config.learning_rate);
    st.history.push_back(loss);
    if (options.on_step) options.on_step(st.step, loss);
  }
  return st;
}

/// Trains the interpolation network with the motion network held fixed.
inline InterpTrainState train_interp(std::span<const PhaseSample> dataset, const MotionParams& motion,
                                     const InterpConfig& config, const TrainOptions& options,
                                     std::optional<InterpTrainState> resume = std::nullopt) {
  if (dataset.empty()) throw ValidationError("train_interp: dataset is empty");
  for (const auto& s : dataset) {
    if (s.intermediates.empty()) throw ValidationError("train_interp: sample " + s.id + " has no intermediates");
  }
  std::vector<PreparedSample> prepared;
  for (const auto& s : dataset) prepared.push_back(prepare_sample(s, motion));
  return train_interp(std::span<const PreparedSample>(prepared), config, options, std::move(resume));
}

/// Evenly spaced phases k/(count+1), k = 1..count.
inline std::vector<double> sequence_phases(int count) {
  if (count < 1) throw ValidationError("intermediate count must be >= 1");
  std::vector<double> t;
  for (int k = 1; k <= count; ++k) t.push_back(static_cast<double>(k) / (count + 1));
  return t;
}

struct SequenceFrame {
  double t = 0.0;
  Volume volume;
  double predicted_phase = 0.0;
};

/// Full-resolution intermediates between ED and ES in phase order.
inline std::vector<SequenceFrame> infer_sequence(const MotionParams& motion, const InterpParams& interp,
                                                 const Volume& ed, const Volume& es, int count) {
  const auto phases = sequence_phases(count);
  detail::require_matching(ed.dims(), es.dims(), "infer_sequence");
  const auto fwd = motion_forward(motion, ed, es);
  const auto bwd = motion_forward(motion, es, ed);
  std::vector<SequenceFrame> out;
  for (double t : phases) {
    auto o = interp_forward(interp, ed, es, fwd, bwd, t);
    out.push_back({t, o.volumes.finest(), o.phase});
  }
  return out;
}

}  // namespace svin
