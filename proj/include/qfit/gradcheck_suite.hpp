#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfit/gradcheck.hpp"

namespace qfit {

struct GradCheckSuiteOptions {
  std::size_t points = 10;
  std::uint64_t seed = 2024;
  ad::GradCheckOptions check;
  // Coordinates sampled per point for the full network case (0 = all).
  std::size_t network_coordinates = 0;
};

struct GradCheckCase {
  std::string name;
  std::size_t points = 0;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  double seconds = 0.0;
  bool passed = true;
};

/// Finite-difference check of every differentiable op, the physics and loss
/// functions, and a head + residual-block network, each at `points` random
/// input draws. Non-scalar outputs are reduced by a random weighted sum.
std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases);

}  // namespace qfit
