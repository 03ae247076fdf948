#include "qfit/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "qfit/parallel.hpp"
#include "qfit/subspace.hpp"

namespace qfit::experiments {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Splitmix-style decorrelation so noise and sampling streams differ per seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ParameterMap scaled(const ParameterMap& map, double factor) {
  ParameterMap out = map;
  for (double& v : out.values) v *= factor;
  return out;
}

void validate_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw std::invalid_argument("experiment seeds must be distinct");
}

}  // namespace

std::vector<std::string> ExperimentReport::methods() const {
  std::vector<std::string> out;
  for (const ReportRow& r : rows) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

std::vector<std::string> ExperimentReport::parameters() const {
  std::vector<std::string> out;
  for (const ReportRow& r : rows) {
    if (std::find(out.begin(), out.end(), r.parameter) == out.end()) out.push_back(r.parameter);
  }
  return out;
}

double ExperimentReport::mean_rmse(const std::string& method, const std::string& parameter) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ReportRow& r : rows) {
    if (r.method == method && r.parameter == parameter) {
      sum += r.rmse;
      ++n;
    }
  }
  if (n == 0) throw std::out_of_range("report has no rows for " + method + "/" + parameter);
  return sum / static_cast<double>(n);
}

double ExperimentReport::ratio(const std::string& baseline, const std::string& parameter) const {
  const double proposed_rmse = mean_rmse(proposed, parameter);
  const double base = mean_rmse(baseline, parameter);
  if (proposed_rmse == 0.0) return base == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return base / proposed_rmse;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream os;
  os << "seed,method,parameter,rmse\n";
  os << std::setprecision(17);
  for (const ReportRow& r : rows) os << r.seed << ',' << r.method << ',' << r.parameter << ',' << r.rmse << '\n';
  return os.str();
}

nlohmann::json ExperimentReport::summary() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["proposed"] = proposed;
  j["config_hash"] = config_hash;
  j["runtime_s"] = runtime_s;
  nlohmann::json mean = nlohmann::json::object();
  nlohmann::json ratios = nlohmann::json::object();
  for (const std::string& m : methods()) {
    for (const std::string& p : parameters()) {
      mean[m][p] = mean_rmse(m, p);
      if (m != proposed) ratios[m][p] = ratio(m, p);
    }
  }
  j["mean_rmse"] = mean;
  j["ratios"] = ratios;
  std::set<std::uint64_t> seeds;
  for (const ReportRow& r : rows) seeds.insert(r.seed);
  j["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  return j;
}

void NoiseExperimentConfig::validate() const {
  phantom.validate();
  protocol.validate();
  training.validate();
  varpro.bounds.validate();
  validate_seeds(seeds);
  if (!(variance >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  if (base_width == 0) throw std::invalid_argument("network width must be positive");
}

ExperimentOutput run_noise_experiment(const NoiseExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentOutput out;
  out.report.experiment = "noise";

  const phantom::Phantom ph = phantom::make_phantom(config.phantom);
  out.mask = ph.mask;
  ContrastStack clean = physics::mono_exp_synth(ph.m0, ph.t2, config.protocol, &ph.mask);
  const double peak = clean.max_magnitude();
  if (!(peak > 0.0)) throw std::invalid_argument("phantom produces no signal");
  for (double& v : clean.real) v /= peak;
  const ParameterMap truth_m0 = scaled(ph.m0, 1.0 / peak);
  const ParameterMap& truth_t2 = ph.t2;
  out.maps.push_back({"truth_m0", 0, truth_m0});
  out.maps.push_back({"truth_t2", 0, truth_t2});

  for (std::uint64_t seed : config.seeds) {
    const ContrastStack noisy = phantom::add_gaussian_noise(clean, config.variance, derive_seed(seed, 0));
    auto record = [&](const std::string& method, const ParameterMap& m0, const ParameterMap& t2) {
      out.report.rows.push_back({seed, method, "T2", phantom::rmse(t2, truth_t2, ph.mask)});
      out.report.rows.push_back({seed, method, "M0", phantom::rmse(m0, truth_m0, ph.mask)});
      out.maps.push_back({method + "_m0", seed, m0});
      out.maps.push_back({method + "_t2", seed, t2});
    };

    fit::VolumeFitOptions vp{fit::Method::kVarpro, config.varpro, config.threads};
    const fit::FitMaps varpro = fit::fit_volume(noisy, config.protocol, &ph.mask, vp);
    record("varpro", varpro.m0, varpro.t2);
    if (config.include_loglinear) {
      fit::VolumeFitOptions ll{fit::Method::kLogLinear, config.varpro, config.threads};
      const fit::FitMaps loglinear = fit::fit_volume(noisy, config.protocol, &ph.mask, ll);
      record("loglinear", loglinear.m0, loglinear.t2);
    }

    train::RelaxometryTask task;
    task.input = noisy;
    task.protocol = config.protocol;
    task.network = train::relaxometry_network_config(config.protocol.size(), config.base_width,
                                                     config.residual_blocks, config.varpro.bounds.min_ms,
                                                     config.varpro.bounds.max_ms);
    task.training = config.training;
    task.training.seed = seed;
    const train::RelaxometryResult net = train::train_relaxometry(task);
    record("network", net.m0, net.t2);
  }
  out.report.runtime_s = seconds_since(start);
  return out;
}

void MrfExperimentConfig::validate() const {
  phantom.validate();
  schedule.validate();
  training.validate();
  validate_seeds(seeds);
  if (grid.t1_ms.empty() || grid.t2_ms.empty()) throw std::invalid_argument("dictionary grid is empty");
  if (!(energy_target > 0.0 && energy_target <= 1.0)) throw std::invalid_argument("energy target must lie in (0, 1]");
  if (acceleration < 1) throw std::invalid_argument("acceleration must be at least 1");
  if (!(variance >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  if (base_width == 0) throw std::invalid_argument("network width must be positive");
}

ContrastStack mrf_truth_stack(const phantom::Phantom& phantom, const physics::FispSchedule& schedule,
                              std::size_t state_cap, std::size_t threads, double* scale) {
  const std::size_t h = phantom.m0.height, w = phantom.m0.width, plane = h * w, t = schedule.n_tr();
  ContrastStack stack = ContrastStack::zeros(t, h, w, true);
  stack.timing_ms = schedule.tr_ms;
  parallel_for(plane, threads, [&](std::size_t p) {
    if (!phantom.mask[p]) return;
    const physics::TissueParams tissue{phantom.t1.values[p], phantom.t2.values[p], phantom.m0.values[p], 0.0};
    const std::vector<Complex> course = physics::epg_fisp(tissue, schedule, state_cap);
    for (std::size_t f = 0; f < t; ++f) {
      stack.real[f * plane + p] = course[f].real();
      stack.imag[f * plane + p] = course[f].imag();
    }
  });
  const double peak = stack.max_magnitude();
  if (!(peak > 0.0)) throw std::invalid_argument("phantom produces no MRF signal");
  for (double& v : stack.real) v /= peak;
  for (double& v : stack.imag) v /= peak;
  if (scale) *scale = peak;
  return stack;
}

ExperimentOutput run_mrf_experiment(const MrfExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentOutput out;
  out.report.experiment = "mrf";

  const phantom::Phantom ph = phantom::make_phantom(config.phantom);
  out.mask = ph.mask;
  const ContrastStack truth = mrf_truth_stack(ph, config.schedule, config.state_cap, config.threads);
  out.maps.push_back({"truth_t1", 0, ph.t1});
  out.maps.push_back({"truth_t2", 0, ph.t2});

  const physics::Dictionary dict =
      physics::generate_dictionary(config.grid, config.schedule, config.threads, config.state_cap);
  const subspace::SubspaceBasis basis = subspace::compress_dictionary(dict, config.energy_target);
  const subspace::CompressedDictionary compressed = subspace::compress_atoms(dict, basis);

  for (std::uint64_t seed : config.seeds) {
    ContrastStack corrupted = phantom::undersample_frames(truth, config.acceleration, derive_seed(seed, 1));
    corrupted = phantom::add_gaussian_noise(corrupted, config.variance, derive_seed(seed, 2));
    auto record = [&](const std::string& method, const train::MatchedMaps& maps) {
      out.report.rows.push_back({seed, method, "T1", phantom::rmse(maps.t1, ph.t1, ph.mask)});
      out.report.rows.push_back({seed, method, "T2", phantom::rmse(maps.t2, ph.t2, ph.mask)});
      out.maps.push_back({method + "_t1", seed, maps.t1});
      out.maps.push_back({method + "_t2", seed, maps.t2});
      out.maps.push_back({method + "_m0", seed, maps.m0});
    };

    const subspace::CoefficientMaps projected = subspace::project_stack(corrupted, basis);
    record("match", train::match_coefficient_maps(projected, compressed, config.threads));

    train::MrfTask task;
    task.input = corrupted;
    task.basis = basis;
    task.dictionary = &compressed;
    task.raw_time_series_input = config.raw_time_series_input;
    task.network = train::mrf_network_config(basis.rank, basis.timepoints, config.raw_time_series_input,
                                             config.base_width, config.residual_blocks);
    task.training = config.training;
    task.training.seed = seed;
    const train::MrfResult net = train::train_mrf(task);
    record("network", {net.t1, net.t2, net.m0});
  }
  out.report.runtime_s = seconds_since(start);
  return out;
}

}  // namespace qfit::experiments
