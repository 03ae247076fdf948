#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qfit/adam.hpp"
#include "qfit/losses.hpp"
#include "qfit/network.hpp"
#include "qfit/signal_models.hpp"
#include "qfit/subspace.hpp"
#include "qfit/types.hpp"

namespace qfit::train {

struct TrainingConfig {
  double learning_rate = 1e-3;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  // Stop once the best loss improved by less than the tolerance over the window.
  std::size_t early_stop_window = 200;
  double early_stop_tolerance = 1e-6;
  // Called after every iteration with (iteration, loss).
  std::function<void(std::size_t, double)> progress;

  void validate() const;
};

/// Final parameters, optimizer moments and loss history of one run.
struct Checkpoint {
  std::vector<ad::Shape> shapes;
  std::vector<std::vector<double>> parameters;
  nn::AdamState optimizer;
  std::vector<double> loss_history;
};

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t iteration, double last_finite_loss)
      : std::runtime_error(what), iteration(iteration), last_finite_loss(last_finite_loss) {}
  std::size_t iteration;
  double last_finite_loss;
};

/// 99th percentile of |value| over every element of the stack (real and
/// imaginary parts combined into magnitudes).
double percentile_magnitude(const ContrastStack& stack, double quantile = 0.99);

nn::NetworkConfig relaxometry_network_config(std::size_t echoes, std::size_t base_width,
                                             std::size_t residual_blocks, double t2_min_ms = 1.0,
                                             double t2_max_ms = 3000.0);

struct RelaxometryTask {
  ContrastStack input;
  physics::EchoProtocol protocol;
  nn::NetworkConfig network;
  TrainingConfig training;
  // Dynamic range is replaced by the maximum of the normalized input.
  nn::SsimConfig ssim;
};

struct RelaxometryResult {
  ParameterMap m0;
  ParameterMap t2;
  std::vector<double> loss_history;
  std::size_t best_iteration = 0;
  double best_loss = 0.0;
  double input_scale = 1.0;
  Checkpoint checkpoint;
};

/// maps (N, 2, H, W) = (M0, T2) -> ssim_loss(mono_exp_synth(maps), target).
ad::Tensor relaxometry_objective(const ad::Tensor& maps, const ad::Tensor& target,
                                 const physics::EchoProtocol& protocol, const nn::SsimConfig& ssim);

RelaxometryResult train_relaxometry(const RelaxometryTask& task);

nn::NetworkConfig mrf_network_config(std::size_t rank, std::size_t timepoints, bool raw_time_series_input,
                                     std::size_t base_width, std::size_t residual_blocks);

struct MrfTask {
  ContrastStack input;  // complex, T frames
  subspace::SubspaceBasis basis;
  // Optional; when set, coefficient maps are matched to (T1, T2, M0).
  const subspace::CompressedDictionary* dictionary = nullptr;
  nn::NetworkConfig network;
  TrainingConfig training;
  // Feed all 2T real/imaginary frames instead of the 2K projected planes.
  bool raw_time_series_input = false;
};

struct MrfResult {
  subspace::CoefficientMaps coefficients;
  ParameterMap t1;
  ParameterMap t2;
  ParameterMap m0;
  std::vector<double> loss_history;
  std::size_t best_iteration = 0;
  double best_loss = 0.0;
  double input_scale = 1.0;
  Checkpoint checkpoint;
};

/// Coefficient planes (1, 2K, H, W) -> L1 between c x phi and the target rows.
ad::Tensor mrf_objective(const ad::Tensor& coefficient_planes, const ad::Tensor& phi,
                         const subspace::TimeSeriesTensors& target);

MrfResult train_mrf(const MrfTask& task);

struct MatchedMaps {
  ParameterMap t1;
  ParameterMap t2;
  ParameterMap m0;
};

/// Per-voxel compressed matching of coefficient maps.
MatchedMaps match_coefficient_maps(const subspace::CoefficientMaps& coefficients,
                                   const subspace::CompressedDictionary& dictionary, std::size_t threads = 1);

}  // namespace qfit::train
