#include "qfit/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "qfit/config.hpp"
#include "qfit/experiments.hpp"
#include "qfit/gradcheck_suite.hpp"
#include "qfit/io.hpp"
#include "qfit/phantom.hpp"
#include "qfit/subspace.hpp"
#include "qfit/training.hpp"

namespace qfit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "qfit_out";
  std::string input;
  std::string mask;
  std::string dictionary;
  std::string basis;
  std::string kind = "multi-echo";
  std::string quantity;
  std::string name;
  bool undersample = false;
  double window = 0.0;
  double level = 0.0;
  bool window_set = false;
  bool level_set = false;
  std::size_t points = 10;
};

class Session {
 public:
  Session(const Options& opt, std::ostream& out, std::ostream& err) : opt_(opt), out_(out), err_(err) {}

  void resolve() {
    cfg_ = opt_.config_path.empty() ? config::RunConfig() : config::RunConfig::from_file(opt_.config_path);
    for (const std::string& s : opt_.overrides) cfg_.set(s);
    cfg_.validate();
    hash_ = cfg_.hash();
    err_ << "[qfit] config sha256 " << hash_ << "\n" << cfg_.dump() << "\n";
  }

  void write_config() const { io::write_file_atomic(path("config.json"), cfg_.dump() + "\n"); }

  fs::path path(const std::string& name) const { return fs::path(opt_.out_dir) / name; }

  void save(const std::string& name, io::VolumeContainer v) const {
    v.config_hash = hash_;
    v.seed = cfg_.seed();
    io::save_volume(path(name), v);
    out_ << "wrote " << path(name).string() << "\n";
  }

  void save_text(const std::string& name, const std::string& text) const {
    io::write_file_atomic(path(name), text);
    out_ << "wrote " << path(name).string() << "\n";
  }

  const config::RunConfig& cfg() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  const Options& opt() const { return opt_; }
  std::ostream& out() const { return out_; }

  train::TrainingConfig training() const {
    train::TrainingConfig t = cfg_.training();
    std::ostream& err = err_;
    t.progress = [&err](std::size_t it, double loss) {
      if ((it + 1) % 100 == 0) err << "[qfit] iteration " << it + 1 << " loss " << loss << "\n";
    };
    return t;
  }

 private:
  const Options& opt_;
  std::ostream& out_;
  std::ostream& err_;
  config::RunConfig cfg_;
  std::string hash_;
};

std::string require_input(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(std::string("--") + flag);
  return value;
}

std::string loss_csv(const std::vector<double>& history) {
  std::ostringstream os;
  os << "iteration,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) os << i << ',' << history[i] << '\n';
  return os.str();
}

ContrastStack load_stack(const std::string& p) { return io::to_stack(io::load_volume(p)); }

void cmd_phantom(Session& s) {
  const phantom::Phantom ph = phantom::make_phantom(s.cfg().phantom());
  s.save("m0.qv", io::from_map(ph.m0));
  s.save("t1.qv", io::from_map(ph.t1));
  s.save("t2.qv", io::from_map(ph.t2));
}

void cmd_simulate(Session& s) {
  const phantom::Phantom ph = phantom::make_phantom(s.cfg().phantom());
  io::VolumeContainer v;
  if (s.opt().kind == "multi-echo") {
    const physics::EchoProtocol proto = s.cfg().protocol();
    ContrastStack stack = physics::mono_exp_synth(ph.m0, ph.t2, proto, &ph.mask);
    const double peak = stack.max_magnitude();
    for (double& x : stack.real) x /= peak;
    stack.timing_ms = proto.echo_times_ms;
    v = io::from_stack(stack);
    v.meta["normalization"] = peak;
  } else if (s.opt().kind == "mrf") {
    const physics::FispSchedule sched = s.cfg().schedule();
    double peak = 0.0;
    v = io::from_stack(experiments::mrf_truth_stack(ph, sched, s.cfg().state_cap(), s.cfg().threads(), &peak));
    v.meta["normalization"] = peak;
    v.meta["schedule_fingerprint"] = sched.fingerprint();
  } else {
    throw CLI::ValidationError("--kind", "must be 'multi-echo' or 'mrf'");
  }
  s.save("stack.qv", v);
}

void cmd_noise(Session& s) {
  ContrastStack stack = load_stack(require_input(s.opt().input, "input"));
  if (s.opt().undersample) {
    stack = phantom::undersample_frames(stack, s.cfg().acceleration(), s.cfg().seed(), s.cfg().center_lines());
  }
  stack = phantom::add_gaussian_noise(stack, s.cfg().noise_variance(), s.cfg().seed());
  s.save("noisy.qv", io::from_stack(stack));
}

physics::EchoProtocol protocol_for(const Session& s, const ContrastStack& stack) {
  physics::EchoProtocol proto = s.cfg().protocol();
  if (!stack.timing_ms.empty()) proto.echo_times_ms = stack.timing_ms;
  return proto;
}

void cmd_fit(Session& s) {
  const ContrastStack stack = load_stack(require_input(s.opt().input, "input"));
  Mask mask;
  if (!s.opt().mask.empty()) mask = io::to_map(io::load_volume(s.opt().mask)).valid;
  const fit::FitMaps maps =
      fit::fit_volume(stack, protocol_for(s, stack), mask.empty() ? nullptr : &mask, s.cfg().fit_options());
  s.save("m0.qv", io::from_map(maps.m0));
  s.save("t2.qv", io::from_map(maps.t2));
}

void cmd_dict(Session& s) {
  const physics::Dictionary d =
      physics::generate_dictionary(s.cfg().grid(), s.cfg().schedule(), s.cfg().threads(), s.cfg().state_cap());
  s.out() << "atoms " << d.size() << " timepoints " << d.timepoints << "\n";
  s.save("dictionary.qv", io::from_dictionary(d));
}

void cmd_compress(Session& s) {
  const physics::Dictionary d = io::to_dictionary(io::load_volume(require_input(s.opt().dictionary, "dictionary")));
  const subspace::SubspaceBasis b = subspace::compress_dictionary(d, s.cfg().energy_target());
  s.out() << "rank " << b.rank << " retained energy " << b.retained_energy << "\n";
  s.save("basis.qv", io::from_basis(b));
}

struct MatchingSetup {
  physics::Dictionary dictionary;
  subspace::SubspaceBasis basis;
  subspace::CompressedDictionary compressed;
};

MatchingSetup load_matching(const Session& s) {
  MatchingSetup m;
  m.dictionary = io::to_dictionary(io::load_volume(require_input(s.opt().dictionary, "dictionary")));
  m.basis = io::to_basis(io::load_volume(require_input(s.opt().basis, "basis")));
  if (m.basis.timepoints != m.dictionary.timepoints) {
    throw std::invalid_argument("basis and dictionary disagree on the number of timepoints");
  }
  m.compressed = subspace::compress_atoms(m.dictionary, m.basis);
  return m;
}

void save_matched(const Session& s, const train::MatchedMaps& maps) {
  s.save("t1.qv", io::from_map(maps.t1));
  s.save("t2.qv", io::from_map(maps.t2));
  s.save("m0.qv", io::from_map(maps.m0));
}

void cmd_match(Session& s) {
  const ContrastStack stack = load_stack(require_input(s.opt().input, "input"));
  const MatchingSetup m = load_matching(s);
  const subspace::CoefficientMaps c = subspace::project_stack(stack, m.basis);
  s.save("coefficients.qv", io::from_coefficients(c));
  save_matched(s, train::match_coefficient_maps(c, m.compressed, s.cfg().threads()));
}

void cmd_train_relax(Session& s) {
  train::RelaxometryTask task;
  task.input = load_stack(require_input(s.opt().input, "input"));
  task.protocol = protocol_for(s, task.input);
  const auto bounds = s.cfg().fit_options().varpro.bounds;
  task.network = train::relaxometry_network_config(task.input.frames, s.cfg().base_width(), s.cfg().residual_blocks(),
                                                   bounds.min_ms, bounds.max_ms);
  task.training = s.training();
  const train::RelaxometryResult r = train::train_relaxometry(task);
  s.out() << "best iteration " << r.best_iteration << " loss " << r.best_loss << "\n";
  s.save("m0.qv", io::from_map(r.m0));
  s.save("t2.qv", io::from_map(r.t2));
  s.save("checkpoint.qv", io::from_checkpoint(r.checkpoint));
  s.save_text("loss.csv", loss_csv(r.loss_history));
}

void cmd_train_mrf(Session& s) {
  const MatchingSetup m = load_matching(s);
  train::MrfTask task;
  task.input = load_stack(require_input(s.opt().input, "input"));
  task.basis = m.basis;
  task.dictionary = &m.compressed;
  task.raw_time_series_input = s.cfg().raw_time_series_input();
  task.network = train::mrf_network_config(m.basis.rank, m.basis.timepoints, task.raw_time_series_input,
                                           s.cfg().base_width(), s.cfg().residual_blocks());
  task.training = s.training();
  const train::MrfResult r = train::train_mrf(task);
  s.out() << "best iteration " << r.best_iteration << " loss " << r.best_loss << "\n";
  s.save("coefficients.qv", io::from_coefficients(r.coefficients));
  save_matched(s, {r.t1, r.t2, r.m0});
  s.save("checkpoint.qv", io::from_checkpoint(r.checkpoint));
  s.save_text("loss.csv", loss_csv(r.loss_history));
}

void save_experiment(Session& s, experiments::ExperimentOutput output) {
  output.report.config_hash = s.hash();
  for (const experiments::MapArtifact& a : output.maps) {
    io::VolumeContainer v = io::from_map(a.map);
    v.meta["experiment_seed"] = a.seed;
    s.save("maps/" + a.name + (a.seed ? "_seed" + std::to_string(a.seed) : std::string()) + ".qv", v);
  }
  s.save_text("report.csv", output.report.to_csv());
  s.save_text("summary.json", output.report.summary().dump(2) + "\n");
  s.out() << output.report.summary().dump(2) << "\n";
}

void cmd_experiment_noise(Session& s) {
  experiments::NoiseExperimentConfig c = s.cfg().noise_experiment();
  c.training.progress = s.training().progress;
  save_experiment(s, experiments::run_noise_experiment(c));
}

void cmd_experiment_mrf(Session& s) {
  experiments::MrfExperimentConfig c = s.cfg().mrf_experiment();
  c.training.progress = s.training().progress;
  save_experiment(s, experiments::run_mrf_experiment(c));
}

void cmd_export(Session& s) {
  const std::string input = require_input(s.opt().input, "input");
  const ParameterMap map = io::to_map(io::load_volume(input));
  const std::string quantity = s.opt().quantity.empty() ? map.quantity : s.opt().quantity;
  io::Window w = s.cfg().window(quantity);
  if (s.opt().window_set) w.width = s.opt().window;
  if (s.opt().level_set) w.level = s.opt().level;
  const std::string name = s.opt().name.empty() ? fs::path(input).stem().string() + ".png" : s.opt().name;
  io::export_map_png(map, w, s.path(name));
  s.out() << "wrote " << s.path(name).string() << "\n";
}

bool cmd_gradcheck(Session& s) {
  GradCheckSuiteOptions o;
  o.points = s.opt().points;
  o.seed = s.cfg().seed();
  const auto cases = run_gradcheck_suite(o);
  s.out() << format_gradcheck_table(cases);
  bool ok = true;
  for (const auto& c : cases) ok = ok && c.passed;
  s.out() << (ok ? "all ops pass" : "gradient check FAILED") << "\n";
  return ok;
}

void emit_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scan-specific quantitative MRI parameter estimation"};
  app.name("qfit");
  app.require_subcommand(1, 1);
  Options opt;

  struct Entry {
    const char* name;
    const char* help;
    std::function<bool(Session&)> action;
  };
  auto always = [](void (*f)(Session&)) { return [f](Session& s) { f(s); return true; }; };
  const std::vector<Entry> entries = {
      {"phantom", "Write the phantom M0/T1/T2 maps", always(cmd_phantom)},
      {"simulate", "Synthesize a multi-echo or MRF stack from the phantom", always(cmd_simulate)},
      {"noise", "Add Gaussian noise (optionally after undersampling) to a stack", always(cmd_noise)},
      {"fit", "Voxel-wise T2 fit of a multi-echo stack", always(cmd_fit)},
      {"dict", "Generate the FISP dictionary", always(cmd_dict)},
      {"compress", "Compress a dictionary to a temporal subspace", always(cmd_compress)},
      {"match", "Project an MRF stack and match it voxel by voxel", always(cmd_match)},
      {"train-relax", "Scan-specific network training for T2 mapping", always(cmd_train_relax)},
      {"train-mrf", "Scan-specific network training for MRF coefficient maps", always(cmd_train_mrf)},
      {"experiment-noise", "Noise-robustness experiment", always(cmd_experiment_noise)},
      {"experiment-mrf", "Undersampled MRF experiment", always(cmd_experiment_mrf)},
      {"export", "Render a map container as an 8-bit PNG", always(cmd_export)},
      {"gradcheck", "Finite-difference gradient check of every differentiable op", cmd_gradcheck},
  };
  std::map<CLI::App*, const Entry*> lookup;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", opt.config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "Override a config value, e.g. training.iterations=500");
    sub->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
    const std::string name = e.name;
    if (name == "noise" || name == "fit" || name == "match" || name == "train-relax" || name == "train-mrf" ||
        name == "export") {
      sub->add_option("--input", opt.input, "Input container")->check(CLI::ExistingFile);
    }
    if (name == "fit") sub->add_option("--mask", opt.mask, "Map container whose validity flags select voxels");
    if (name == "compress" || name == "match" || name == "train-mrf") {
      sub->add_option("--dictionary", opt.dictionary, "Dictionary container")->check(CLI::ExistingFile);
    }
    if (name == "match" || name == "train-mrf") {
      sub->add_option("--basis", opt.basis, "Subspace basis container")->check(CLI::ExistingFile);
    }
    if (name == "simulate") {
      sub->add_option("--kind", opt.kind, "multi-echo or mrf")->check(CLI::IsMember({"multi-echo", "mrf"}));
    }
    if (name == "noise") sub->add_flag("--undersample", opt.undersample, "Apply frame-varying undersampling first");
    if (name == "export") {
      sub->add_option("--quantity", opt.quantity, "Window preset (T1, T2, M0); defaults to the map's quantity");
      sub->add_option("--window", opt.window, "Window width")->each([&](const std::string&) { opt.window_set = true; });
      sub->add_option("--level", opt.level, "Window level")->each([&](const std::string&) { opt.level_set = true; });
      sub->add_option("--name", opt.name, "Output file name");
    }
    if (name == "gradcheck") sub->add_option("--points", opt.points, "Random points per op")->capture_default_str();
    lookup[sub] = &e;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what(), kExitUsage);
    err << app.help();
    return kExitUsage;
  }

  const Entry* entry = nullptr;
  for (CLI::App* sub : app.get_subcommands()) entry = lookup.at(sub);
  Session session(opt, out, err);
  try {
    session.resolve();
  } catch (const config::ConfigError& e) {
    emit_error(err, "config", e.what(), kExitConfig);
    return kExitConfig;
  }
  try {
    session.write_config();
    return entry->action(session) ? kExitOk : kExitRuntime;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const config::ConfigError& e) {
    emit_error(err, "config", e.what(), kExitConfig);
    return kExitConfig;
  } catch (const train::TrainingDiverged& e) {
    emit_error(err, "diverged", e.what(), kExitRuntime);
    return kExitRuntime;
  } catch (const std::exception& e) {
    emit_error(err, "runtime", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

}  // namespace qfit::cli
