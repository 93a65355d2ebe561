#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "svin/grid.hpp"

namespace svin {

/// One intermediate acquisition between ED and ES.
struct PhaseFrame {
  double t = 0.0;
  Volume volume;
  std::optional<Volume> mask;
  std::optional<VectorField> true_field;
};

/// Training/evaluation record: the two bounding volumes plus ordered intermediates.
struct PhaseSample {
  std::string id;
  Volume ed;
  Volume es;
  std::optional<Volume> ed_mask;
  std::optional<Volume> es_mask;
  std::optional<VectorField> es_field;
  std::vector<PhaseFrame> intermediates;

  void validate() const {
    const Dims d = ed.dims();
    if (!(es.dims() == d)) throw ShapeError("sample " + id + ": ED/ES grid mismatch");
    double prev = 0.0;
    for (const auto& f : intermediates) {
      if (!(f.t > prev && f.t < 1.0)) {
        throw ValidationError("sample " + id + ": phases must be strictly increasing inside (0,1)");
      }
      prev = f.t;
      if (!(f.volume.dims() == d)) throw ShapeError("sample " + id + ": intermediate grid mismatch");
      if (f.mask && !(f.mask->dims() == d)) throw ShapeError("sample " + id + ": mask grid mismatch");
      if (f.true_field && !(f.true_field->dims() == d)) throw ShapeError("sample " + id + ": field grid mismatch");
    }
  }
};

/// Visiting order of `n` items during `epoch`; a pure function of (seed, epoch)
/// so resumed runs replay the same schedule.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::size_t scheduled_item(std::uint64_t seed, long step, std::size_t n) {
  const long epoch = step / static_cast<long>(n);
  return epoch_order(seed, epoch, n)[static_cast<std::size_t>(step % static_cast<long>(n))];
}

}  // namespace svin
