#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qfit/tensor.hpp"

namespace qfit::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_parameters(std::span<const ad::Tensor> params);
};

/// Bias-corrected Adam update applied in place to parameter leaves.
void adam_step(std::span<ad::Tensor> params, const ad::Gradients& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace qfit::nn
