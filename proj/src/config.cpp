#include "qfit/config.hpp"

#include <cmath>

#include "qfit/hash.hpp"

namespace qfit::config {

using nlohmann::json;

json defaults() {
  return json::parse(R"({
    "seed": 1,
    "threads": 1,
    "phantom": {"height": 64, "width": 64, "variation": 0.05, "seed": 1},
    "protocol": {"first_te_ms": 6.0, "spacing_ms": 6.0, "echoes": 10},
    "schedule": {"n_tr": 600, "inversion": true, "inversion_delay_ms": 40.0},
    "dictionary": {"t1_min_ms": 100.0, "t1_max_ms": 3000.0, "t1_step_ms": 20.0,
                   "t2_min_ms": 10.0, "t2_max_ms": 400.0, "t2_step_ms": 2.0, "state_cap": 0},
    "subspace": {"energy_target": 0.95},
    "noise": {"variance": 0.001},
    "undersampling": {"acceleration": 6, "center_lines": 8},
    "fit": {"method": "varpro", "t2_min_ms": 1.0, "t2_max_ms": 3000.0, "grid_points": 200, "tolerance_ms": 1e-4},
    "network": {"base_width": 16, "residual_blocks": 9},
    "training": {"learning_rate": 1e-3, "iterations": 2000, "early_stop_window": 200,
                 "early_stop_tolerance": 1e-6, "raw_time_series_input": false},
    "experiment_noise": {"seeds": [1, 2, 3], "include_loglinear": true},
    "experiment_mrf": {"seeds": [1, 2]},
    "export": {
      "T1": {"level": 1500.0, "width": 3000.0},
      "T2": {"level": 150.0, "width": 300.0},
      "M0": {"level": 0.5, "width": 1.0}
    }
  })");
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not silently become fractions.
    if (a.is_number_integer() && b.is_number_float()) return false;
    return true;
  }
  return a.type() == b.type();
}

void merge_into(json& target, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!target.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      merge_into(slot, value, here);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("config key '" + here + "' expects " + std::string(slot.type_name()) + ", got " +
                        value.type_name());
    } else if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

RunConfig::RunConfig() : doc_(defaults()) {}

RunConfig RunConfig::from_json(const json& document) {
  RunConfig c;
  c.merge(document);
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return from_json(doc);
}

void RunConfig::merge(const json& patch) { merge_into(doc_, patch, ""); }

void RunConfig::set(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const std::size_t dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    require(!part.empty(), "override key '" + key + "' has an empty component");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge(patch);
}

const json& RunConfig::at(const std::string& dotted) const {
  return doc_.at(json::json_pointer("/" + [&] {
    std::string p = dotted;
    for (char& c : p) {
      if (c == '.') c = '/';
    }
    return p;
  }()));
}

std::string RunConfig::hash() const { return sha256_hex(doc_.dump()); }

void RunConfig::validate() const {
  try {
    phantom().validate();
    protocol().validate();
    schedule().validate();
    training().validate();
    fit_options().varpro.bounds.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(threads() >= 1, "threads must be at least 1");
  require(noise_variance() >= 0.0, "noise.variance must be non-negative");
  require(acceleration() >= 1, "undersampling.acceleration must be at least 1");
  const double e = energy_target();
  require(e > 0.0 && e <= 1.0, "subspace.energy_target must lie in (0, 1]");
  require(base_width() >= 1, "network.base_width must be at least 1");
  const auto g = grid();
  require(!g.t1_ms.empty() && !g.t2_ms.empty(), "dictionary grid is empty");
  const std::string method = at("fit.method").get<std::string>();
  require(method == "varpro" || method == "loglinear", "fit.method must be 'varpro' or 'loglinear'");
  require(at("fit.grid_points").get<long long>() >= 3, "fit.grid_points must be at least 3");
  for (const char* section : {"experiment_noise.seeds", "experiment_mrf.seeds"}) {
    const json& seeds = at(section);
    require(seeds.is_array() && !seeds.empty(), std::string(section) + " must be a non-empty array");
    for (const json& s : seeds) require(s.is_number_unsigned(), std::string(section) + " must hold non-negative integers");
  }
  for (const char* q : {"T1", "T2", "M0"}) require(window(q).width > 0.0, std::string("export.") + q + ".width must be positive");
}

namespace {

std::size_t as_count(const json& j, const std::string& name) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(name + " must be a non-negative integer");
  return j.get<std::size_t>();
}

}  // namespace

std::uint64_t RunConfig::seed() const { return as_count(at("seed"), "seed"); }
std::size_t RunConfig::threads() const { return as_count(at("threads"), "threads"); }

phantom::PhantomSpec RunConfig::phantom() const {
  return phantom::PhantomSpec::brain(as_count(at("phantom.height"), "phantom.height"),
                                     as_count(at("phantom.width"), "phantom.width"),
                                     as_count(at("phantom.seed"), "phantom.seed"), at("phantom.variation").get<double>());
}

physics::EchoProtocol RunConfig::protocol() const {
  return physics::EchoProtocol::uniform(at("protocol.first_te_ms").get<double>(), at("protocol.spacing_ms").get<double>(),
                                        as_count(at("protocol.echoes"), "protocol.echoes"));
}

physics::FispSchedule RunConfig::schedule() const {
  const std::size_t n = as_count(at("schedule.n_tr"), "schedule.n_tr");
  physics::FispSchedule base = physics::default_schedule();
  require(n >= 1 && n <= base.n_tr(), "schedule.n_tr must lie in [1, " + std::to_string(base.n_tr()) + "]");
  physics::FispSchedule s = base.truncated(n);
  s.inversion = at("schedule.inversion").get<bool>();
  s.inversion_delay_ms = at("schedule.inversion_delay_ms").get<double>();
  return s;
}

physics::DictionaryGrid RunConfig::grid() const {
  auto d = [&](const char* k) { return at(std::string("dictionary.") + k).get<double>(); };
  require(d("t1_step_ms") > 0.0 && d("t2_step_ms") > 0.0, "dictionary steps must be positive");
  require(d("t1_min_ms") > 0.0 && d("t2_min_ms") > 0.0, "dictionary minima must be positive");
  require(d("t1_max_ms") >= d("t1_min_ms") && d("t2_max_ms") >= d("t2_min_ms"), "dictionary ranges are empty");
  return physics::DictionaryGrid::range(d("t1_min_ms"), d("t1_max_ms"), d("t1_step_ms"), d("t2_min_ms"),
                                        d("t2_max_ms"), d("t2_step_ms"));
}

std::size_t RunConfig::state_cap() const { return as_count(at("dictionary.state_cap"), "dictionary.state_cap"); }
double RunConfig::energy_target() const { return at("subspace.energy_target").get<double>(); }
double RunConfig::noise_variance() const { return at("noise.variance").get<double>(); }
std::size_t RunConfig::acceleration() const {
  return as_count(at("undersampling.acceleration"), "undersampling.acceleration");
}
std::size_t RunConfig::center_lines() const {
  return as_count(at("undersampling.center_lines"), "undersampling.center_lines");
}

fit::VolumeFitOptions RunConfig::fit_options() const {
  fit::VolumeFitOptions o;
  o.method = at("fit.method").get<std::string>() == "loglinear" ? fit::Method::kLogLinear : fit::Method::kVarpro;
  o.varpro.bounds = {at("fit.t2_min_ms").get<double>(), at("fit.t2_max_ms").get<double>()};
  o.varpro.grid_points = as_count(at("fit.grid_points"), "fit.grid_points");
  o.varpro.tolerance_ms = at("fit.tolerance_ms").get<double>();
  o.threads = threads();
  return o;
}

train::TrainingConfig RunConfig::training() const {
  train::TrainingConfig t;
  t.learning_rate = at("training.learning_rate").get<double>();
  t.iterations = as_count(at("training.iterations"), "training.iterations");
  t.early_stop_window = as_count(at("training.early_stop_window"), "training.early_stop_window");
  t.early_stop_tolerance = at("training.early_stop_tolerance").get<double>();
  t.seed = seed();
  return t;
}

std::size_t RunConfig::base_width() const { return as_count(at("network.base_width"), "network.base_width"); }
std::size_t RunConfig::residual_blocks() const {
  return as_count(at("network.residual_blocks"), "network.residual_blocks");
}
bool RunConfig::raw_time_series_input() const { return at("training.raw_time_series_input").get<bool>(); }

experiments::NoiseExperimentConfig RunConfig::noise_experiment() const {
  experiments::NoiseExperimentConfig c;
  c.phantom = phantom();
  c.protocol = protocol();
  c.variance = noise_variance();
  c.seeds = at("experiment_noise.seeds").get<std::vector<std::uint64_t>>();
  c.base_width = base_width();
  c.residual_blocks = residual_blocks();
  c.training = training();
  c.varpro = fit_options().varpro;
  c.include_loglinear = at("experiment_noise.include_loglinear").get<bool>();
  c.threads = threads();
  return c;
}

experiments::MrfExperimentConfig RunConfig::mrf_experiment() const {
  experiments::MrfExperimentConfig c;
  c.phantom = phantom();
  c.schedule = schedule();
  c.grid = grid();
  c.energy_target = energy_target();
  c.acceleration = acceleration();
  c.variance = noise_variance();
  c.seeds = at("experiment_mrf.seeds").get<std::vector<std::uint64_t>>();
  c.base_width = base_width();
  c.residual_blocks = residual_blocks();
  c.training = training();
  c.raw_time_series_input = raw_time_series_input();
  c.state_cap = state_cap();
  c.threads = threads();
  return c;
}

io::Window RunConfig::window(const std::string& quantity) const {
  const std::string key = "export." + quantity;
  require(doc_.at("export").contains(quantity), "no export window configured for '" + quantity + "'");
  return {at(key + ".width").get<double>(), at(key + ".level").get<double>()};
}

}  // namespace qfit::config
