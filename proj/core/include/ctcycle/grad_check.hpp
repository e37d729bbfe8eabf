#pragma once

#include <cstdint>
#include <functional>

#include "ctcycle/tensor.hpp"

namespace ctcycle {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every element; otherwise a seeded sample of this many.
  std::int64_t max_elements = 0;
  std::uint64_t seed = 0x5eed;
  /// Relative error denominator floor, so dead paths with ~0 gradients do not
  /// divide noise by noise.
  double denom_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  std::int64_t checked = 0;
  /// Elements sitting on a detected non-smooth point (one-sided differences
  /// disagree, e.g. relu at 0). Flagged, excluded from max_rel_error.
  std::int64_t flagged = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of a scalar-valued deterministic function
/// against central finite differences, element by element over x. The
/// function must rebuild its graph on every call; it receives a tape for the
/// analytic pass and nullptr for the perturbed evaluations.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>*)>& f, Tensor<T> x,
                           const GradCheckOptions& options = {});

}  // namespace ctcycle
