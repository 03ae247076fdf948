#include "qfit/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "qfit/ops.hpp"
#include "qfit/parallel.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace qfit::train {

namespace {

// Activations are reallocated every iteration; keep freed blocks in the heap
// instead of returning them to the kernel.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

Checkpoint make_checkpoint(const std::vector<ad::Tensor>& params, const nn::AdamState& state,
                           const std::vector<double>& history) {
  Checkpoint c;
  for (const ad::Tensor& p : params) {
    c.shapes.push_back(p.shape());
    c.parameters.emplace_back(p.values().begin(), p.values().end());
  }
  c.optimizer = state;
  c.loss_history = history;
  return c;
}

bool should_stop(const std::vector<double>& best_so_far, const TrainingConfig& cfg) {
  const std::size_t n = best_so_far.size();
  if (cfg.early_stop_window == 0 || n <= cfg.early_stop_window) return false;
  return best_so_far[n - 1 - cfg.early_stop_window] - best_so_far[n - 1] < cfg.early_stop_tolerance;
}

// Shared loop: forward -> objective -> record -> backward -> Adam.
template <typename Objective, typename Snapshot>
void run_training(nn::MappingNetwork& net, const ad::Tensor& input, const TrainingConfig& cfg,
                  Objective objective, Snapshot snapshot, std::vector<double>& history,
                  std::size_t& best_iteration, double& best_loss, nn::AdamState& state) {
  tune_allocator();
  std::vector<ad::Tensor>& params = net.parameters();
  state = nn::AdamState::for_parameters(params);
  const nn::AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  std::vector<double> best_so_far;
  best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    ad::Tensor output;
    ad::Tensor loss;
    ad::Gradients grads;
    try {
      output = net.forward(input);
      loss = objective(output);
      grads = ad::backward(loss, params);
    } catch (const ad::NonFiniteError& e) {
      const double last = history.empty() ? std::numeric_limits<double>::quiet_NaN() : history.back();
      std::ostringstream os;
      os << "training diverged at iteration " << it << " (last finite loss " << last << "): " << e.what();
      throw TrainingDiverged(os.str(), it, last);
    }
    const double value = loss.item();
    history.push_back(value);
    if (value < best_loss) {
      best_loss = value;
      best_iteration = it;
      snapshot(output);
    }
    best_so_far.push_back(best_loss);
    if (cfg.progress) cfg.progress(it, value);
    nn::adam_step(params, grads, state, adam);
    if (should_stop(best_so_far, cfg)) break;
  }
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigurationError("learning rate must be positive");
  if (iterations == 0) throw ConfigurationError("iterations must be at least 1");
  if (early_stop_tolerance < 0.0) throw ConfigurationError("early-stop tolerance must be non-negative");
}

double percentile_magnitude(const ContrastStack& stack, double quantile) {
  stack.validate();
  std::vector<double> mags(stack.size());
  for (std::size_t i = 0; i < mags.size(); ++i) {
    mags[i] = stack.is_complex() ? std::hypot(stack.real[i], stack.imag[i]) : std::abs(stack.real[i]);
  }
  const auto pos = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(mags.size() - 1)));
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(pos), mags.end());
  return mags[pos];
}

nn::NetworkConfig relaxometry_network_config(std::size_t echoes, std::size_t base_width,
                                             std::size_t residual_blocks, double t2_min_ms, double t2_max_ms) {
  nn::NetworkConfig cfg;
  cfg.in_channels = echoes;
  cfg.base_width = base_width;
  cfg.n_residual_blocks = residual_blocks;
  cfg.out_channels = 2;
  cfg.out_activation = {nn::OutputActivation::positive(), nn::OutputActivation::bounded(t2_min_ms, t2_max_ms)};
  return cfg;
}

ad::Tensor relaxometry_objective(const ad::Tensor& maps, const ad::Tensor& target,
                                 const physics::EchoProtocol& protocol, const nn::SsimConfig& ssim) {
  const ad::Tensor m0 = ad::slice_channels(maps, 0, 1);
  const ad::Tensor t2 = ad::slice_channels(maps, 1, 1);
  return nn::ssim_loss(physics::mono_exp_synth(m0, t2, protocol), target, ssim);
}

RelaxometryResult train_relaxometry(const RelaxometryTask& task) {
  task.input.validate();
  task.protocol.validate();
  task.training.validate();
  task.network.validate();
  if (task.input.is_complex()) throw ConfigurationError("relaxometry expects real multi-echo input");
  if (task.input.frames != task.protocol.size()) {
    throw ConfigurationError("input has " + std::to_string(task.input.frames) + " echoes, protocol " +
                             std::to_string(task.protocol.size()));
  }
  if (task.network.in_channels != task.input.frames || task.network.out_channels != 2) {
    throw ConfigurationError("relaxometry network must map " + std::to_string(task.input.frames) +
                             " echoes to 2 output channels");
  }

  const std::size_t h = task.input.height, w = task.input.width, plane = h * w;
  RelaxometryResult result;
  result.input_scale = percentile_magnitude(task.input);
  if (!(result.input_scale > 0.0)) throw ConfigurationError("relaxometry input is identically zero");

  std::vector<double> normalized(task.input.real);
  double peak = 0.0;
  for (double& v : normalized) {
    v /= result.input_scale;
    peak = std::max(peak, std::abs(v));
  }
  const ad::Tensor input = ad::Tensor::constant({1, task.input.frames, h, w}, std::move(normalized));
  nn::SsimConfig ssim = task.ssim;
  ssim.dynamic_range = peak;

  nn::MappingNetwork net(task.network, task.training.seed);
  std::vector<double> best_maps;
  run_training(
      net, input, task.training,
      [&](const ad::Tensor& maps) { return relaxometry_objective(maps, input, task.protocol, ssim); },
      [&](const ad::Tensor& maps) { best_maps.assign(maps.values().begin(), maps.values().end()); },
      result.loss_history, result.best_iteration, result.best_loss, result.checkpoint.optimizer);

  result.m0 = ParameterMap::filled(h, w, 0.0, "M0", "a.u.");
  result.t2 = ParameterMap::filled(h, w, 0.0, "T2", "ms");
  for (std::size_t p = 0; p < plane; ++p) {
    result.m0.values[p] = best_maps[p] * result.input_scale;
    result.t2.values[p] = best_maps[plane + p];
  }
  result.checkpoint = make_checkpoint(net.parameters(), result.checkpoint.optimizer, result.loss_history);
  return result;
}

nn::NetworkConfig mrf_network_config(std::size_t rank, std::size_t timepoints, bool raw_time_series_input,
                                     std::size_t base_width, std::size_t residual_blocks) {
  nn::NetworkConfig cfg;
  cfg.in_channels = 2 * (raw_time_series_input ? timepoints : rank);
  cfg.base_width = base_width;
  cfg.n_residual_blocks = residual_blocks;
  cfg.out_channels = 2 * rank;
  return cfg;
}

ad::Tensor mrf_objective(const ad::Tensor& coefficient_planes, const ad::Tensor& phi,
                         const subspace::TimeSeriesTensors& target) {
  const subspace::TimeSeriesTensors synth = subspace::synth_timeseries(coefficient_planes, phi);
  // Mean over real and imaginary parts together.
  return ad::scale(ad::add(nn::l1_loss(synth.real, target.real), nn::l1_loss(synth.imag, target.imag)), 0.5);
}

MrfResult train_mrf(const MrfTask& task) {
  task.input.validate();
  task.basis.validate();
  task.training.validate();
  task.network.validate();
  const std::size_t k = task.basis.rank, t = task.basis.timepoints;
  if (task.input.frames != t) {
    throw ConfigurationError("MRF input has " + std::to_string(task.input.frames) + " frames, basis " +
                             std::to_string(t));
  }
  if (task.network.out_channels != 2 * k) {
    throw ConfigurationError("network emits " + std::to_string(task.network.out_channels) +
                             " channels but the basis needs 2K = " + std::to_string(2 * k));
  }
  const std::size_t expected_in = 2 * (task.raw_time_series_input ? t : k);
  if (task.network.in_channels != expected_in) {
    throw ConfigurationError("network expects " + std::to_string(task.network.in_channels) +
                             " input channels, data provides " + std::to_string(expected_in));
  }
  if (task.dictionary && task.dictionary->rank != k) {
    throw ConfigurationError("compressed dictionary rank differs from the basis rank");
  }

  const std::size_t h = task.input.height, w = task.input.width, plane = h * w;
  const subspace::CoefficientMaps projected = subspace::project_stack(task.input, task.basis);

  MrfResult result;
  {
    std::vector<double> mags(k * plane);
    for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::hypot(projected.real[i], projected.imag[i]);
    const auto pos = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(mags.size() - 1)));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(pos), mags.end());
    result.input_scale = mags[pos];
  }
  if (!(result.input_scale > 0.0)) throw ConfigurationError("MRF input projects to zero");
  const double inv = 1.0 / result.input_scale;

  std::vector<double> in_values;
  if (task.raw_time_series_input) {
    in_values.reserve(2 * t * plane);
    for (double v : task.input.real) in_values.push_back(v * inv);
    if (task.input.is_complex()) {
      for (double v : task.input.imag) in_values.push_back(v * inv);
    } else {
      in_values.resize(2 * t * plane, 0.0);
    }
  } else {
    in_values.reserve(2 * k * plane);
    for (double v : projected.real) in_values.push_back(v * inv);
    for (double v : projected.imag) in_values.push_back(v * inv);
  }
  const ad::Tensor input = ad::Tensor::constant({1, expected_in, h, w}, std::move(in_values));

  subspace::TimeSeriesTensors target;
  {
    ContrastStack scaled = task.input;
    for (double& v : scaled.real) v *= inv;
    for (double& v : scaled.imag) v *= inv;
    target = subspace::stack_to_rows(scaled);
  }
  const ad::Tensor phi = subspace::basis_tensor(task.basis);

  nn::MappingNetwork net(task.network, task.training.seed);
  std::vector<double> best_planes;
  run_training(
      net, input, task.training, [&](const ad::Tensor& planes) { return mrf_objective(planes, phi, target); },
      [&](const ad::Tensor& planes) { best_planes.assign(planes.values().begin(), planes.values().end()); },
      result.loss_history, result.best_iteration, result.best_loss, result.checkpoint.optimizer);

  result.coefficients = subspace::CoefficientMaps::zeros(k, h, w);
  for (std::size_t i = 0; i < k * plane; ++i) {
    result.coefficients.real[i] = best_planes[i] * result.input_scale;
    result.coefficients.imag[i] = best_planes[k * plane + i] * result.input_scale;
  }
  if (task.dictionary) {
    MatchedMaps maps = match_coefficient_maps(result.coefficients, *task.dictionary);
    result.t1 = std::move(maps.t1);
    result.t2 = std::move(maps.t2);
    result.m0 = std::move(maps.m0);
  }
  result.checkpoint = make_checkpoint(net.parameters(), result.checkpoint.optimizer, result.loss_history);
  return result;
}

MatchedMaps match_coefficient_maps(const subspace::CoefficientMaps& coefficients,
                                   const subspace::CompressedDictionary& dictionary, std::size_t threads) {
  const std::size_t h = coefficients.height, w = coefficients.width;
  MatchedMaps maps{ParameterMap::filled(h, w, 0.0, "T1", "ms"), ParameterMap::filled(h, w, 0.0, "T2", "ms"),
                   ParameterMap::filled(h, w, 0.0, "M0", "a.u.")};
  parallel_for(h * w, threads, [&](std::size_t p) {
    const MatchResult m = subspace::match_compressed(coefficients.voxel(p), dictionary);
    maps.t1.values[p] = m.t1_ms;
    maps.t2.values[p] = m.t2_ms;
    maps.m0.values[p] = std::abs(m.scale);
  });
  return maps;
}

}  // namespace qfit::train
