#pragma once

#include <cstdint>
#include <vector>

#include "qfit/tensor.hpp"

namespace qfit::nn {

using ad::Tensor;

enum class ActivationKind { kLinear, kSoftplus, kBoundedSigmoid };

struct OutputActivation {
  ActivationKind kind = ActivationKind::kLinear;
  double lower = 1.0;
  double upper = 3000.0;

  static OutputActivation linear() { return {}; }
  static OutputActivation positive() { return {ActivationKind::kSoftplus, 0.0, 0.0}; }
  static OutputActivation bounded(double lower, double upper) {
    return {ActivationKind::kBoundedSigmoid, lower, upper};
  }
};

struct NetworkConfig {
  std::size_t in_channels = 1;
  std::size_t base_width = 64;
  std::size_t n_residual_blocks = 9;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  double norm_eps = 1e-5;
  // One entry per output channel; empty means linear everywhere.
  std::vector<OutputActivation> out_activation;

  void validate() const;
};

/// lower + (upper - lower) * sigmoid(raw). Throws if lower >= upper.
Tensor bounded_sigmoid(const Tensor& raw, double lower, double upper);

/// Conv-norm-ReLU head, residual blocks, 1x1 output conv, per-channel output
/// activation. Spatial size is preserved.
class MappingNetwork {
 public:
  MappingNetwork(NetworkConfig config, std::uint64_t seed);

  Tensor forward(const Tensor& input) const;
  Tensor forward_raw(const Tensor& input) const;

  const NetworkConfig& config() const { return config_; }
  std::vector<Tensor>& parameters() { return parameters_; }
  const std::vector<Tensor>& parameters() const { return parameters_; }
  std::size_t parameter_count() const;

 private:
  struct Conv {
    Tensor weight, bias;
  };
  struct Norm {
    Tensor gamma, beta;
  };
  struct Block {
    Conv conv1;
    Norm norm1;
    Conv conv2;
    Norm norm2;
  };

  Tensor apply_output_activation(const Tensor& raw) const;

  NetworkConfig config_;
  Conv head_conv_;
  Norm head_norm_;
  std::vector<Block> blocks_;
  Conv tail_conv_;
  std::vector<Tensor> parameters_;
};

}  // namespace qfit::nn
