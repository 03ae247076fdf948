#include "qfit/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "qfit/ops.hpp"

namespace qfit::nn {

void NetworkConfig::validate() const {
  if (in_channels == 0) throw std::invalid_argument("network: in_channels must be >= 1");
  if (base_width == 0) throw std::invalid_argument("network: base_width must be >= 1");
  if (n_residual_blocks == 0) throw std::invalid_argument("network: n_residual_blocks must be >= 1");
  if (out_channels == 0) throw std::invalid_argument("network: out_channels must be >= 1");
  if (kernel_size % 2 == 0) throw std::invalid_argument("network: kernel_size must be odd");
  if (!(norm_eps > 0.0)) throw std::invalid_argument("network: norm_eps must be positive");
  if (!out_activation.empty() && out_activation.size() != out_channels) {
    throw std::invalid_argument("network: out_activation needs one entry per output channel");
  }
  for (const OutputActivation& a : out_activation) {
    if (a.kind == ActivationKind::kBoundedSigmoid && !(a.lower < a.upper)) {
      throw std::invalid_argument("network: bounded activation requires lower < upper");
    }
  }
}

Tensor bounded_sigmoid(const Tensor& raw, double lower, double upper) {
  if (!(lower < upper)) {
    throw std::invalid_argument("bounded_sigmoid: lower bound " + std::to_string(lower) +
                                " must be below upper bound " + std::to_string(upper));
  }
  return ad::add_scalar(ad::scale(ad::sigmoid(raw), upper - lower), lower);
}

MappingNetwork::MappingNetwork(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);

  auto make_conv = [&](std::size_t cin, std::size_t cout, std::size_t k) {
    const double bound = std::sqrt(1.0 / static_cast<double>(cin * k * k));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(cout * cin * k * k), b(cout);
    for (double& v : w) v = dist(rng);
    for (double& v : b) v = dist(rng);
    Conv conv{Tensor::parameter({cout, cin, k, k}, std::move(w)), Tensor::parameter({cout}, std::move(b))};
    parameters_.push_back(conv.weight);
    parameters_.push_back(conv.bias);
    return conv;
  };
  auto make_norm = [&](std::size_t c) {
    Norm norm{Tensor::parameter({c}, std::vector<double>(c, 1.0)),
              Tensor::parameter({c}, std::vector<double>(c, 0.0))};
    parameters_.push_back(norm.gamma);
    parameters_.push_back(norm.beta);
    return norm;
  };

  const std::size_t width = config_.base_width;
  const std::size_t k = config_.kernel_size;
  head_conv_ = make_conv(config_.in_channels, width, k);
  head_norm_ = make_norm(width);
  for (std::size_t i = 0; i < config_.n_residual_blocks; ++i) {
    Block block;
    block.conv1 = make_conv(width, width, k);
    block.norm1 = make_norm(width);
    block.conv2 = make_conv(width, width, k);
    block.norm2 = make_norm(width);
    blocks_.push_back(std::move(block));
  }
  tail_conv_ = make_conv(width, config_.out_channels, 1);
}

std::size_t MappingNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters_) n += p.numel();
  return n;
}

Tensor MappingNetwork::forward_raw(const Tensor& input) const {
  using namespace ad;
  const double eps = config_.norm_eps;
  Tensor h = relu(instance_norm(conv2d(input, head_conv_.weight, head_conv_.bias), head_norm_.gamma,
                                head_norm_.beta, eps));
  for (const Block& b : blocks_) {
    Tensor r = relu(instance_norm(conv2d(h, b.conv1.weight, b.conv1.bias), b.norm1.gamma, b.norm1.beta, eps));
    r = instance_norm(conv2d(r, b.conv2.weight, b.conv2.bias), b.norm2.gamma, b.norm2.beta, eps);
    h = relu(add(h, r));
  }
  return conv2d(h, tail_conv_.weight, tail_conv_.bias);
}

Tensor MappingNetwork::apply_output_activation(const Tensor& raw) const {
  if (config_.out_activation.empty()) return raw;
  bool all_linear = true;
  for (const OutputActivation& a : config_.out_activation) {
    all_linear = all_linear && a.kind == ActivationKind::kLinear;
  }
  if (all_linear) return raw;

  std::vector<Tensor> channels;
  channels.reserve(config_.out_channels);
  for (std::size_t c = 0; c < config_.out_channels; ++c) {
    Tensor ch = ad::slice_channels(raw, c, 1);
    const OutputActivation& a = config_.out_activation[c];
    switch (a.kind) {
      case ActivationKind::kLinear:
        break;
      case ActivationKind::kSoftplus:
        ch = ad::softplus(ch);
        break;
      case ActivationKind::kBoundedSigmoid:
        ch = bounded_sigmoid(ch, a.lower, a.upper);
        break;
    }
    channels.push_back(std::move(ch));
  }
  return ad::concat_channels(channels);
}

Tensor MappingNetwork::forward(const Tensor& input) const {
  if (input.rank() != 4 || input.dim(1) != config_.in_channels) {
    throw ad::ShapeError("network expects (N, " + std::to_string(config_.in_channels) +
                         ", H, W) input, got " + ad::shape_string(input.shape()));
  }
  return apply_output_activation(forward_raw(input));
}

}  // namespace qfit::nn
