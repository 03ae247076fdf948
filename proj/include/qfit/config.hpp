#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfit/experiments.hpp"
#include "qfit/io.hpp"

namespace qfit::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every tunable value with its default. Sections mirror the modules.
nlohmann::json defaults();

/// Resolved configuration: defaults, then the file, then --set overrides.
class RunConfig {
 public:
  RunConfig();
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& document);

  /// Deep-merges `patch`; unknown keys or mismatched value types throw ConfigError.
  void merge(const nlohmann::json& patch);
  /// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
  void set(const std::string& assignment);
  void validate() const;

  const nlohmann::json& document() const { return doc_; }
  std::string dump() const { return doc_.dump(2); }
  /// SHA-256 of the compact resolved document.
  std::string hash() const;

  std::uint64_t seed() const;
  std::size_t threads() const;
  phantom::PhantomSpec phantom() const;
  physics::EchoProtocol protocol() const;
  physics::FispSchedule schedule() const;
  physics::DictionaryGrid grid() const;
  std::size_t state_cap() const;
  double energy_target() const;
  double noise_variance() const;
  std::size_t acceleration() const;
  std::size_t center_lines() const;
  fit::VolumeFitOptions fit_options() const;
  train::TrainingConfig training() const;
  std::size_t base_width() const;
  std::size_t residual_blocks() const;
  bool raw_time_series_input() const;
  experiments::NoiseExperimentConfig noise_experiment() const;
  experiments::MrfExperimentConfig mrf_experiment() const;
  io::Window window(const std::string& quantity) const;

 private:
  const nlohmann::json& at(const std::string& dotted) const;
  nlohmann::json doc_;
};

}  // namespace qfit::config
