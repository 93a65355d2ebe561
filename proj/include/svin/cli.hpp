#pragma once

// Command-line front end: phantom, train-motion, train-interp, interpolate,
// evaluate. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svin/checkpoint.hpp"
#include "svin/metrics.hpp"
#include "svin/run_config.hpp"
#include "svin/visualize.hpp"

namespace svin::cli {

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  svin::detail::write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline nlohmann::json read_json(const fs::path& path) {
  const auto bytes = svin::detail::read_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline std::string history_csv(const std::vector<double>& h) {
  std::ostringstream os;
  os << "step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < h.size(); ++i) os << i << ',' << h[i] << '\n';
  return os.str();
}

/// "t_0.25" style stem; four decimals once two would collide.
inline std::string phase_stem(double t, int count) {
  char buf[32];
  std::snprintf(buf, sizeof buf, count < 100 ? "t_%.2f" : "t_%.4f", t);
  return buf;
}

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Frozen-motion fields for a sample, read from / written to SVIN_CACHE_DIR when set.
inline PreparedSample prepare_cached(const PhaseSample& s, const MotionParams& motion, const std::string& motion_key) {
  const char* env = std::getenv("SVIN_CACHE_DIR");
  if (!env || !*env) return prepare_sample(s, motion);
  const fs::path dir = fs::path(env) / ("motion-" + motion_key) / s.id;
  auto load = [&](const char* dirn) {
    std::array<VectorField, 3> lv;
    for (int c = 1; c <= 3; ++c) lv[c - 1] = load_field(dir / (std::string(dirn) + "_c" + std::to_string(c) + ".svv"));
    return Pyramid<VectorField>(std::move(lv));
  };
  if (fs::exists(dir / "bwd_c3.svv")) {
    PreparedSample p{build_pyramid(s.ed), build_pyramid(s.es), load("fwd"), load("bwd"), {}, {}};
    for (const auto& f : s.intermediates) {
      p.phases.push_back(f.t);
      p.truth.push_back(build_pyramid(f.volume));
    }
    return p;
  }
  PreparedSample p = prepare_sample(s, motion);
  for (int c = 1; c <= 3; ++c) {
    save_field(p.fwd.level(c), dir / ("fwd_c" + std::to_string(c) + ".svv"));
    save_field(p.bwd.level(c), dir / ("bwd_c" + std::to_string(c) + ".svv"));
  }
  return p;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline TrainOptions progress(long steps, std::uint64_t seed, std::ostream& out, const char* tag) {
  TrainOptions o;
  o.steps = steps;
  o.seed = seed;
  o.on_step = [&out, tag, steps](long step, double loss) {
    if ((step + 1) % 50 == 0 || step + 1 == steps) {
      out << tag << " step " << (step + 1) << '/' << steps << " loss " << loss << '\n' << std::flush;
    }
  };
  return o;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_phantom(const RunConfig& cfg, std::ostream& out) {
  const fs::path root = cfg.paths.output;
  const PhantomSpec base = cfg.phantom.spec(cfg.seed);
  const auto samples = generate_phantom_dataset(base, static_cast<std::size_t>(cfg.phantom.samples), cfg.phantom.phases);
  write_dataset(root, samples);
  nlohmann::json spec = {{"seed", cfg.seed},
                         {"samples", cfg.phantom.samples},
                         {"size", cfg.phantom.size},
                         {"phases", cfg.phantom.phases},
                         {"alpha", base.alpha},
                         {"exponent", base.exponent},
                         {"twist", base.twist},
                         {"noise", base.noise}};
  detail::write_text(root / "phantom.json", spec.dump(2) + "\n");
  const auto& s = samples.front();
  std::vector<Volume> seq{s.ed};
  for (const auto& f : s.intermediates) seq.push_back(f.volume);
  seq.push_back(s.es);
  viz::write_png(root / "preview.png", viz::montage(seq));
  out << "wrote " << samples.size() << " samples to " << root.string() << '\n';
  return 0;
}

inline int cmd_train_motion(const RunConfig& cfg, const std::string& resume, std::ostream& out) {
  const auto dataset = read_dataset(cfg.paths.dataset);
  std::optional<MotionTrainState> state;
  if (!resume.empty()) {
    state = load_motion_checkpoint(resume);
    const auto& c = state->net.config();
    if (c.base_width != cfg.motion.base_width || c.encoder_depth != cfg.motion.encoder_depth) {
      throw ValidationError("resume checkpoint architecture differs from motion config");
    }
    out << "resuming motion training at step " << state->step << '\n';
  }
  auto st = train_motion(dataset, cfg.motion, detail::progress(cfg.motion_steps, cfg.seed, out, "motion"), std::move(state));
  const fs::path root = cfg.paths.output;
  save_checkpoint(root / "motion.ckpt", st);
  detail::write_text(root / "motion_loss.csv", detail::history_csv(st.history));
  viz::write_png(root / "motion_loss.png", viz::loss_curve(st.history));
  out << "wrote " << (root / "motion.ckpt").string() << '\n';
  return 0;
}

inline int cmd_train_interp(const RunConfig& cfg, const std::string& resume, std::ostream& out) {
  const auto dataset = read_dataset(cfg.paths.dataset);
  const auto motion_bytes = svin::detail::read_bytes(cfg.paths.motion_checkpoint);
  const auto motion = decode_checkpoint<MotionParams>(motion_bytes).net;
  const std::string key = detail::hex(detail::fnv1a(motion_bytes));
  std::vector<PreparedSample> prepared;
  for (const auto& s : dataset) {
    if (s.intermediates.empty()) throw ValidationError("sample " + s.id + " has no intermediates");
    prepared.push_back(detail::prepare_cached(s, motion, key));
  }
  std::optional<InterpTrainState> state;
  if (!resume.empty()) {
    state = load_interp_checkpoint(resume);
    if (state->net.config().base_width != cfg.interp.base_width) {
      throw ValidationError("resume checkpoint architecture differs from interp config");
    }
    out << "resuming interp training at step " << state->step << '\n';
  }
  auto st = train_interp(std::span<const PreparedSample>(prepared), cfg.interp,
                         detail::progress(cfg.interp_steps, cfg.seed, out, "interp"), std::move(state));
  const fs::path root = cfg.paths.output;
  save_checkpoint(root / "interp.ckpt", st);
  detail::write_text(root / "interp_loss.csv", detail::history_csv(st.history));
  viz::write_png(root / "interp_loss.png", viz::loss_curve(st.history));
  out << "wrote " << (root / "interp.ckpt").string() << '\n';
  return 0;
}

struct InterpolateArgs {
  std::string ed, es, ed_mask, method = "svin";
};

/// Writes `count` intermediates (and warped masks when an ED mask is given) into `dir`.
inline void interpolate_pair(const Volume& ed, const Volume& es, const std::optional<Volume>& ed_mask,
                             const std::string& method, int count, const std::optional<MotionParams>& motion,
                             const std::optional<InterpParams>& interp, const fs::path& dir) {
  if (!(ed.dims() == es.dims())) throw ShapeError("ED " + ed.dims().str() + " and ES " + es.dims().str() + " differ");
  const auto phases = sequence_phases(count);
  std::optional<Pyramid<VectorField>> fwd, bwd;
  if (method != "blend") {
    fwd = motion_forward(*motion, ed, es);
    bwd = motion_forward(*motion, es, ed);
  }
  std::vector<Volume> seq{ed};
  for (double t : phases) {
    const std::string stem = detail::phase_stem(t, count);
    Volume v;
    std::optional<VectorField> carry;
    if (method == "svin") {
      auto o = interp_forward(*interp, ed, es, *fwd, *bwd, t);
      v = o.volumes.finest();
      carry = o.fields.from_ed;
    } else if (method == "linear") {
      auto f = linear_intermediate_fields(fwd->finest(), bwd->finest(), PhaseIndex(t));
      v = blend_linear(ed, es, f.from_ed, f.from_es, PhaseIndex(t));
      carry = f.from_ed;
    } else {
      v = intensity_blend(ed, es, PhaseIndex(t));
    }
    save_volume(v, dir / (stem + ".svv"));
    if (ed_mask && carry) save_volume(warp_mask(*ed_mask, *carry), dir / ("mask_" + stem + ".svv"), "mask");
    viz::write_png(dir / ("montage_" + stem + ".png"), viz::montage({v}));
    seq.push_back(std::move(v));
  }
  seq.push_back(es);
  viz::write_png(dir / "sequence.png", viz::montage(seq));
}

inline int cmd_interpolate(const RunConfig& cfg, const InterpolateArgs& a, std::ostream& out) {
  std::optional<MotionParams> motion;
  std::optional<InterpParams> interp;
  if (a.method != "blend") motion = load_motion_checkpoint(cfg.paths.motion_checkpoint).net;
  if (a.method == "svin") interp = load_interp_checkpoint(cfg.paths.interp_checkpoint).net;
  const fs::path root = cfg.paths.output;
  if (!a.ed.empty()) {
    std::optional<Volume> mask;
    if (!a.ed_mask.empty()) mask = load_volume(a.ed_mask);
    interpolate_pair(load_volume(a.ed), load_volume(a.es), mask, a.method, cfg.count, motion, interp, root);
    out << "wrote " << cfg.count << " intermediates to " << root.string() << '\n';
    return 0;
  }
  const auto dataset = read_dataset(cfg.paths.dataset);
  for (const auto& s : dataset) interpolate_pair(s.ed, s.es, s.ed_mask, a.method, cfg.count, motion, interp, root / s.id);
  out << "wrote " << cfg.count << " intermediates for " << dataset.size() << " samples to " << root.string() << '\n';
  return 0;
}

struct EvaluateArgs {
  std::vector<std::string> pred;  ///< "label=dir" or "dir"
  std::string ref;
  bool masks = false;
  bool slicewise = false;
};

inline std::pair<std::string, fs::path> split_pred(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    fs::path p(spec);
    const std::string label = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
    return {label, p};
  }
  return {spec.substr(0, eq), fs::path(spec.substr(eq + 1))};
}

inline int cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const auto refs = read_dataset(a.ref);
  metrics::MetricReport report;
  std::vector<std::string> unpaired;
  for (const auto& spec : a.pred) {
    const auto [label, dir] = split_pred(spec);
    for (const auto& s : refs) {
      const fs::path sd = dir / s.id;
      const int count = static_cast<int>(s.intermediates.size());
      for (std::size_t k = 0; k < s.intermediates.size(); ++k) {
        const auto& f = s.intermediates[k];
        fs::path file;
        for (const auto& cand : {detail::phase_stem(f.t, count), detail::phase_stem(f.t, 100), "t_" + std::to_string(k + 1)}) {
          if (fs::exists(sd / (cand + ".svv"))) {
            file = sd / (cand + ".svv");
            break;
          }
        }
        if (file.empty()) {
          unpaired.push_back(label + ":" + s.id + "@" + detail::phase_stem(f.t, count));
          continue;
        }
        const Volume pred = load_volume(file);
        std::optional<Volume> pmask;
        const fs::path mfile = file.parent_path() / ("mask_" + file.filename().string());
        if (a.masks && f.mask && fs::exists(mfile)) pmask = load_volume(mfile);
        auto row = metrics::evaluate(pred, f.volume, pmask ? &*pmask : nullptr, pmask ? &*f.mask : nullptr, a.slicewise);
        row.sample = s.id;
        row.method = label;
        row.phase = f.t;
        report.add(std::move(row));
      }
    }
  }
  if (!unpaired.empty()) {
    err << "error: unpaired samples:";
    for (const auto& u : unpaired) err << ' ' << u;
    err << '\n';
    return 1;
  }
  const fs::path root = cfg.paths.output;
  detail::write_text(root / "report.json", report.to_json().dump(2) + "\n");
  detail::write_text(root / "report.csv", report.to_csv());
  out << std::left << std::setw(10) << "method" << std::setw(8) << "phase" << std::setw(12) << "mse" << std::setw(10)
      << "psnr" << std::setw(10) << "ssim" << "dice\n";
  for (const auto& g : report.aggregates()) {
    std::ostringstream ph;
    if (g.phase) {
      ph << std::fixed << std::setprecision(2) << *g.phase;
    } else {
      ph << "all";
    }
    out << std::left << std::setw(10) << g.method << std::setw(8) << ph.str() << std::setw(12) << std::setprecision(5)
        << g.mse << std::setw(10) << std::setprecision(4) << g.psnr << std::setw(10) << g.ssim
        << (g.dice ? std::to_string(*g.dice) : std::string("-")) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sequential volumetric interpolation between end-diastole and end-systole"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, dump_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, device;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--device", device, "Compute device (cpu)");
  app.add_option("--dump-config", dump_path, "Write the resolved configuration to this path and exit");

  std::optional<int> samples, size, phases;
  std::optional<double> alpha, exponent, twist, noise;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  phantom->add_option("--samples", samples);
  phantom->add_option("--size", size, "Grid extent per axis");
  phantom->add_option("--phases", phases, "Phases per sample, ED and ES included");
  phantom->add_option("--alpha", alpha, "Peak contraction fraction");
  phantom->add_option("--exponent", exponent, "Time-law exponent p in s(t)=t^p");
  phantom->add_option("--twist", twist, "Peak twist angle (radians)");
  phantom->add_option("--noise", noise, "Noise standard deviation");

  std::optional<std::string> dataset, motion_ckpt, interp_ckpt;
  std::optional<long> steps;
  std::optional<double> lr, smooth, lambda_s, lambda_r, lambda_g;
  std::string resume;
  auto* train_motion_cmd = app.add_subcommand("train-motion", "Train the motion network");
  train_motion_cmd->add_option("--dataset", dataset);
  train_motion_cmd->add_option("--steps", steps, "Total optimizer steps (including resumed ones)");
  train_motion_cmd->add_option("--lr", lr);
  train_motion_cmd->add_option("--smoothness-weight", smooth);
  train_motion_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  auto* train_interp_cmd = app.add_subcommand("train-interp", "Train the interpolation network");
  train_interp_cmd->add_option("--dataset", dataset);
  train_interp_cmd->add_option("--motion", motion_ckpt, "Trained motion checkpoint (kept frozen)");
  train_interp_cmd->add_option("--steps", steps, "Total optimizer steps (including resumed ones)");
  train_interp_cmd->add_option("--lr", lr);
  train_interp_cmd->add_option("--lambda-s", lambda_s);
  train_interp_cmd->add_option("--lambda-r", lambda_r);
  train_interp_cmd->add_option("--lambda-g", lambda_g);
  train_interp_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  InterpolateArgs ia;
  std::optional<int> count;
  auto* interpolate = app.add_subcommand("interpolate", "Synthesize intermediate volumes");
  interpolate->add_option("--ed", ia.ed);
  interpolate->add_option("--es", ia.es);
  interpolate->add_option("--ed-mask", ia.ed_mask, "ED label mask to carry along the ED-side field");
  interpolate->add_option("--dataset", dataset, "Interpolate every sample of a dataset instead of --ed/--es");
  interpolate->add_option("--count", count);
  interpolate->add_option("--motion", motion_ckpt);
  interpolate->add_option("--interp", interp_ckpt);
  interpolate->add_option("--method", ia.method, "svin, linear (learned fields, plain blend) or blend (intensity)")
      ->check(CLI::IsMember({"svin", "linear", "blend"}));

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against a reference dataset");
  evaluate->add_option("--pred", ea.pred, "Prediction directory, optionally label=dir; repeatable")->required();
  evaluate->add_option("--ref", ea.ref, "Reference dataset directory")->required();
  evaluate->add_flag("--masks", ea.masks, "Report Dice where masks exist");
  evaluate->add_flag("--slicewise-ssim", ea.slicewise, "Average 2D SSIM over z-slices");

  std::vector<std::string> argv_store(args.rbegin(), args.rend());
  try {
    app.parse(argv_store);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  RunConfig cfg;
  std::vector<std::string> errs;
  if (!config_path.empty()) {
    try {
      for (auto& e : apply_json(detail::read_json(config_path), cfg)) errs.push_back(std::move(e));
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
  }
  if (seed) cfg.seed = *seed;
  if (out_dir) cfg.paths.output = *out_dir;
  if (device) cfg.device = *device;
  if (samples) cfg.phantom.samples = *samples;
  if (size) cfg.phantom.size = *size;
  if (phases) cfg.phantom.phases = *phases;
  if (alpha) cfg.phantom.alpha = *alpha;
  if (exponent) cfg.phantom.exponent = *exponent;
  if (twist) cfg.phantom.twist = *twist;
  if (noise) cfg.phantom.noise = *noise;
  if (dataset) cfg.paths.dataset = *dataset;
  if (motion_ckpt) cfg.paths.motion_checkpoint = *motion_ckpt;
  if (interp_ckpt) cfg.paths.interp_checkpoint = *interp_ckpt;
  if (count) cfg.count = *count;
  const bool motion_verb = train_motion_cmd->parsed();
  if (steps) (motion_verb ? cfg.motion_steps : cfg.interp_steps) = *steps;
  if (lr) (motion_verb ? cfg.motion.learning_rate : cfg.interp.learning_rate) = *lr;
  if (smooth) cfg.motion.smoothness_weight = *smooth;
  if (lambda_s) cfg.interp.weights.similar = *lambda_s;
  if (lambda_r) cfg.interp.weights.regression = *lambda_r;
  if (lambda_g) cfg.interp.weights.bidirectional = *lambda_g;

  for (auto& e : cfg.validate()) errs.push_back(std::move(e));
  std::vector<std::string> required;
  if (motion_verb) required = {"dataset"};
  if (train_interp_cmd->parsed()) required = {"dataset", "motion_checkpoint"};
  if (interpolate->parsed()) {
    if (ia.ed.empty() != ia.es.empty()) errs.push_back("interpolate needs both --ed and --es");
    if (ia.ed.empty() && cfg.paths.dataset.empty()) errs.push_back("interpolate needs --ed/--es or --dataset");
    if (ia.ed.empty() && !cfg.paths.dataset.empty()) required.push_back("dataset");
    if (ia.method != "blend") required.push_back("motion_checkpoint");
    if (ia.method == "svin") required.push_back("interp_checkpoint");
    for (const auto& p : {ia.ed, ia.es, ia.ed_mask}) {
      if (!p.empty() && !fs::exists(p)) errs.push_back("file '" + p + "' does not exist");
    }
  }
  if (evaluate->parsed()) {
    if (!fs::is_directory(ea.ref)) errs.push_back("reference dataset '" + ea.ref + "' does not exist");
    for (const auto& p : ea.pred) {
      if (!fs::is_directory(split_pred(p).second)) errs.push_back("prediction directory '" + p + "' does not exist");
    }
  }
  if (!resume.empty() && !fs::exists(resume)) errs.push_back("resume checkpoint '" + resume + "' does not exist");
  for (auto& e : cfg.validate_paths(required)) errs.push_back(std::move(e));
  if (!errs.empty()) {
    for (const auto& e : errs) err << "config error: " << e << '\n';
    return 2;
  }

  try {
    if (!dump_path.empty()) {
      detail::write_text(dump_path, nlohmann::json(cfg).dump(2) + "\n");
      return 0;
    }
    if (phantom->parsed()) return cmd_phantom(cfg, out);
    if (motion_verb) return cmd_train_motion(cfg, resume, out);
    if (train_interp_cmd->parsed()) return cmd_train_interp(cfg, resume, out);
    if (interpolate->parsed()) return cmd_interpolate(cfg, ia, out);
    if (evaluate->parsed()) return cmd_evaluate(cfg, ea, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace svin::cli
