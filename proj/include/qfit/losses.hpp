#pragma once

#include <vector>

#include "qfit/tensor.hpp"

namespace qfit::nn {

using ad::Tensor;

struct SsimConfig {
  std::size_t window_size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  void validate() const;

  static SsimConfig for_range(double dynamic_range);
};

/// Normalized 2-D Gaussian window, row-major size x size.
std::vector<double> gaussian_window(std::size_t size, double sigma);

/// 1 - mean SSIM over every channel and valid window position.
/// Inputs are (N, C, H, W) with H, W >= window size.
Tensor ssim_loss(const Tensor& a, const Tensor& b, const SsimConfig& config);

/// Mean absolute difference.
Tensor l1_loss(const Tensor& a, const Tensor& b);

}  // namespace qfit::nn
