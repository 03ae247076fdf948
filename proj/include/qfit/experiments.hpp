#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfit/baselines.hpp"
#include "qfit/phantom.hpp"
#include "qfit/signal_models.hpp"
#include "qfit/training.hpp"

namespace qfit::experiments {

struct ReportRow {
  std::uint64_t seed = 0;
  std::string method;
  std::string parameter;
  double rmse = 0.0;
};

/// Raw per-seed RMSE table plus aggregates derived from it. Ratios are
/// mean(baseline RMSE) / mean(proposed RMSE) over seeds.
struct ExperimentReport {
  std::string experiment;
  std::string proposed = "network";
  std::vector<ReportRow> rows;
  double runtime_s = 0.0;
  std::string config_hash;

  std::vector<std::string> methods() const;
  std::vector<std::string> parameters() const;
  double mean_rmse(const std::string& method, const std::string& parameter) const;
  double ratio(const std::string& baseline, const std::string& parameter) const;

  std::string to_csv() const;
  nlohmann::json summary() const;
};

struct MapArtifact {
  std::string name;  // e.g. "network_t2"
  std::uint64_t seed = 0;
  ParameterMap map;
};

struct ExperimentOutput {
  ExperimentReport report;
  std::vector<MapArtifact> maps;
  Mask mask;
};

struct NoiseExperimentConfig {
  phantom::PhantomSpec phantom = phantom::PhantomSpec::brain();
  physics::EchoProtocol protocol = physics::EchoProtocol::uniform(6.0, 6.0, 10);
  double variance = 0.001;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t base_width = 16;
  std::size_t residual_blocks = 9;
  train::TrainingConfig training;
  fit::VarproOptions varpro;
  bool include_loglinear = true;
  std::size_t threads = 1;

  void validate() const;
};

/// Multi-echo phantom -> unit normalization -> Gaussian noise -> varpro,
/// log-linear and scan-specific network fits -> RMSE over the phantom mask.
ExperimentOutput run_noise_experiment(const NoiseExperimentConfig& config);

struct MrfExperimentConfig {
  phantom::PhantomSpec phantom = phantom::PhantomSpec::brain();
  physics::FispSchedule schedule = physics::default_schedule();
  physics::DictionaryGrid grid = physics::DictionaryGrid::range(100.0, 3000.0, 20.0, 10.0, 400.0, 2.0);
  double energy_target = 0.95;
  std::size_t acceleration = 6;
  double variance = 0.001;
  std::vector<std::uint64_t> seeds{1, 2};
  std::size_t base_width = 16;
  std::size_t residual_blocks = 9;
  train::TrainingConfig training;
  bool raw_time_series_input = false;
  std::size_t state_cap = 0;
  std::size_t threads = 1;

  void validate() const;
};

/// Ground truth time courses from the EPG model -> unit normalization ->
/// frame-varying undersampling + noise -> per-voxel projection and compressed
/// matching versus the scan-specific coefficient network.
ExperimentOutput run_mrf_experiment(const MrfExperimentConfig& config);

/// Noiseless, fully sampled MRF stack for a phantom, normalized to unit peak
/// magnitude. `scale` receives the normalization divisor.
ContrastStack mrf_truth_stack(const phantom::Phantom& phantom, const physics::FispSchedule& schedule,
                              std::size_t state_cap, std::size_t threads, double* scale = nullptr);

}  // namespace qfit::experiments
