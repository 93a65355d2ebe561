#pragma once

// Run configuration shared by the command-line verbs. One JSON document with
// sections; command-line flags override file values, which override defaults.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svin/checkpoint.hpp"
#include "svin/phantom.hpp"

namespace svin {

struct RunPaths {
  std::string dataset;
  std::string motion_checkpoint;
  std::string interp_checkpoint;
  std::string output = "out";
};

struct PhantomOptions {
  int samples = 10;
  int size = 32;
  int phases = 5;
  double alpha = 0.3;
  double exponent = 2.0;
  double twist = 0.3;
  double noise = 0.01;

  PhantomSpec spec(std::uint64_t seed) const {
    PhantomSpec s = PhantomSpec::for_dims(Dims{size, size, size});
    s.alpha = alpha;
    s.exponent = exponent;
    s.twist = twist;
    s.noise = noise;
    s.seed = seed;
    return s;
  }
};

struct RunConfig {
  RunPaths paths;
  MotionConfig motion;
  InterpConfig interp;
  PhantomOptions phantom;
  long motion_steps = 2000;
  long interp_steps = 600;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  int count = 3;

  /// Every violated constraint, in field order.
  std::vector<std::string> validate() const {
    std::vector<std::string> errs = motion.validate();
    for (auto& e : interp.validate()) errs.push_back(std::move(e));
    if (count < 1) errs.push_back("count must be >= 1");
    if (motion_steps < 0) errs.push_back("training.motion_steps must be >= 0");
    if (interp_steps < 0) errs.push_back("training.interp_steps must be >= 0");
    if (device != "cpu") errs.push_back("device '" + device + "' is not available; only 'cpu' is supported");
    if (phantom.samples < 1) errs.push_back("phantom.samples must be >= 1");
    if (phantom.size < 8 || phantom.size % 4 != 0) errs.push_back("phantom.size must be a multiple of 4 and >= 8");
    if (phantom.phases < 3) errs.push_back("phantom.phases must be >= 3");
    if (!(phantom.alpha >= 0 && phantom.alpha < 1)) errs.push_back("phantom.alpha must lie in [0,1)");
    if (!(phantom.exponent > 0)) errs.push_back("phantom.exponent must be > 0");
    if (!(phantom.noise >= 0)) errs.push_back("phantom.noise must be >= 0");
    return errs;
  }

  /// Checks that the listed path fields name existing files or directories.
  std::vector<std::string> validate_paths(const std::vector<std::string>& required) const {
    std::vector<std::string> errs;
    for (const auto& key : required) {
      const std::string* v = key == "dataset"             ? &paths.dataset
                             : key == "motion_checkpoint" ? &paths.motion_checkpoint
                             : key == "interp_checkpoint" ? &paths.interp_checkpoint
                                                          : nullptr;
      if (!v) continue;
      if (v->empty()) {
        errs.push_back("paths." + key + " is required");
      } else if (!std::filesystem::exists(*v)) {
        errs.push_back("paths." + key + " '" + *v + "' does not exist");
      }
    }
    return errs;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"device", c.device},
       {"count", c.count},
       {"paths",
        {{"dataset", c.paths.dataset},
         {"motion_checkpoint", c.paths.motion_checkpoint},
         {"interp_checkpoint", c.paths.interp_checkpoint},
         {"output", c.paths.output}}},
       {"motion", c.motion},
       {"interp", c.interp},
       {"training", {{"motion_steps", c.motion_steps}, {"interp_steps", c.interp_steps}}},
       {"phantom",
        {{"samples", c.phantom.samples},
         {"size", c.phantom.size},
         {"phases", c.phantom.phases},
         {"alpha", c.phantom.alpha},
         {"exponent", c.phantom.exponent},
         {"twist", c.phantom.twist},
         {"noise", c.phantom.noise}}}};
}

/// Overlays the fields present in `j` onto `c`; unknown keys are reported.
inline std::vector<std::string> apply_json(const nlohmann::json& j, RunConfig& c) {
  std::vector<std::string> errs;
  static const std::vector<std::string> known{"seed", "device", "count", "paths", "motion", "interp", "training", "phantom"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) errs.push_back("unknown config section '" + k + "'");
  }
  try {
    c.seed = j.value("seed", c.seed);
    c.device = j.value("device", c.device);
    c.count = j.value("count", c.count);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.dataset = p.value("dataset", c.paths.dataset);
      c.paths.motion_checkpoint = p.value("motion_checkpoint", c.paths.motion_checkpoint);
      c.paths.interp_checkpoint = p.value("interp_checkpoint", c.paths.interp_checkpoint);
      c.paths.output = p.value("output", c.paths.output);
    }
    if (j.contains("motion")) from_json(j.at("motion"), c.motion);
    if (j.contains("interp")) from_json(j.at("interp"), c.interp);
    if (j.contains("training")) {
      c.motion_steps = j.at("training").value("motion_steps", c.motion_steps);
      c.interp_steps = j.at("training").value("interp_steps", c.interp_steps);
    }
    if (j.contains("phantom")) {
      const auto& p = j.at("phantom");
      c.phantom.samples = p.value("samples", c.phantom.samples);
      c.phantom.size = p.value("size", c.phantom.size);
      c.phantom.phases = p.value("phases", c.phantom.phases);
      c.phantom.alpha = p.value("alpha", c.phantom.alpha);
      c.phantom.exponent = p.value("exponent", c.phantom.exponent);
      c.phantom.twist = p.value("twist", c.phantom.twist);
      c.phantom.noise = p.value("noise", c.phantom.noise);
    }
  } catch (const nlohmann::json::exception& e) {
    errs.push_back(std::string("config type error: ") + e.what());
  }
  return errs;
}

}  // namespace svin
