#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qfit/tensor.hpp"

namespace qfit::ad {

struct GradCheckOptions {
  double step = 1e-6;
  double relative_tolerance = 1e-5;
  // Differences below absolute_floor * max(1, |f|) are treated as agreement:
  // central differences carry round-off proportional to |f| / step.
  double absolute_floor = 1e-8;
  // 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Compares reverse-mode gradients of `f` at `inputs` (parameter leaves) with
/// central finite differences. Inputs are perturbed in place and restored.
GradCheckResult check_gradients(const ScalarFunction& f, std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double absolute_floor);

}  // namespace qfit::ad
