#include "qfit/signal_models.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "qfit/hash.hpp"
#include "qfit/ops.hpp"
#include "qfit/parallel.hpp"

namespace qfit::physics {

EchoProtocol EchoProtocol::uniform(double first_te_ms, double spacing_ms, std::size_t count) {
  EchoProtocol p;
  for (std::size_t i = 0; i < count; ++i) p.echo_times_ms.push_back(first_te_ms + spacing_ms * static_cast<double>(i));
  p.validate();
  return p;
}

void EchoProtocol::validate() const {
  if (echo_times_ms.empty()) throw std::invalid_argument("echo protocol has no echoes");
  for (std::size_t i = 0; i < echo_times_ms.size(); ++i) {
    if (!(echo_times_ms[i] > 0.0)) throw std::invalid_argument("echo times must be positive");
    if (i > 0 && !(echo_times_ms[i] > echo_times_ms[i - 1])) {
      throw std::invalid_argument("echo times must be strictly increasing");
    }
  }
}

double mono_exp(double m0, double t2_ms, double te_ms) { return m0 * std::exp(-te_ms / t2_ms); }

std::vector<double> mono_exp_decay(double m0, double t2_ms, const EchoProtocol& protocol) {
  if (!(t2_ms > 0.0)) throw std::domain_error("mono_exp_decay: t2 must be positive");
  std::vector<double> s(protocol.size());
  for (std::size_t e = 0; e < protocol.size(); ++e) s[e] = mono_exp(m0, t2_ms, protocol.echo_times_ms[e]);
  return s;
}

ContrastStack mono_exp_synth(const ParameterMap& m0, const ParameterMap& t2, const EchoProtocol& protocol,
                             const Mask* mask) {
  protocol.validate();
  if (!m0.same_grid(t2)) throw std::invalid_argument("mono_exp_synth: m0 and t2 maps differ in size");
  if (mask && mask->size() != m0.size()) throw std::invalid_argument("mono_exp_synth: mask size mismatch");
  ContrastStack stack = ContrastStack::zeros(protocol.size(), m0.height, m0.width, false);
  stack.timing_ms = protocol.echo_times_ms;
  for (std::size_t p = 0; p < m0.size(); ++p) {
    if (mask && !(*mask)[p]) continue;
    if (!(t2.values[p] > 0.0)) {
      throw std::domain_error("mono_exp_synth: non-positive t2 " + std::to_string(t2.values[p]) + " at voxel " +
                              std::to_string(p));
    }
    for (std::size_t e = 0; e < protocol.size(); ++e) {
      stack.real[e * stack.plane() + p] = mono_exp(m0.values[p], t2.values[p], protocol.echo_times_ms[e]);
    }
  }
  return stack;
}

ad::Tensor mono_exp_synth(const ad::Tensor& m0, const ad::Tensor& t2, const EchoProtocol& protocol) {
  protocol.validate();
  if (m0.shape() != t2.shape() || m0.rank() != 4 || m0.dim(1) != 1) {
    throw ad::ShapeError("mono_exp_synth: expected matching (N, 1, H, W) maps");
  }
  for (double v : t2.values()) {
    if (!(v > 0.0)) throw std::domain_error("mono_exp_synth: non-positive t2 in tensor input");
  }
  const ad::Tensor rate = ad::reciprocal(t2);
  std::vector<ad::Tensor> echoes;
  echoes.reserve(protocol.size());
  for (double te : protocol.echo_times_ms) echoes.push_back(ad::mul(m0, ad::exp(ad::scale(rate, -te))));
  return ad::concat_channels(echoes);
}

void FispSchedule::validate() const {
  const std::size_t n = n_tr();
  if (n == 0) throw std::invalid_argument("FISP schedule is empty");
  if (tr_ms.size() != n || te_ms.size() != n) {
    throw std::invalid_argument("FISP schedule lists differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(flip_angles_deg[i] >= 0.0 && flip_angles_deg[i] <= 90.0)) {
      throw std::invalid_argument("flip angle outside [0, 90] degrees at TR " + std::to_string(i));
    }
    if (!(te_ms[i] >= 0.0 && te_ms[i] <= tr_ms[i])) {
      throw std::invalid_argument("TE must lie within [0, TR] at TR " + std::to_string(i));
    }
  }
  if (inversion && !(inversion_delay_ms >= 0.0)) throw std::invalid_argument("negative inversion delay");
}

FispSchedule FispSchedule::truncated(std::size_t n) const {
  if (n == 0 || n > n_tr()) throw std::invalid_argument("cannot truncate schedule to " + std::to_string(n) + " TRs");
  FispSchedule s = *this;
  s.flip_angles_deg.resize(n);
  s.tr_ms.resize(n);
  s.te_ms.resize(n);
  return s;
}

std::string FispSchedule::fingerprint() const {
  std::vector<double> packed;
  packed.reserve(3 * n_tr() + 2);
  packed.insert(packed.end(), flip_angles_deg.begin(), flip_angles_deg.end());
  packed.insert(packed.end(), tr_ms.begin(), tr_ms.end());
  packed.insert(packed.end(), te_ms.begin(), te_ms.end());
  packed.push_back(inversion ? 1.0 : 0.0);
  packed.push_back(inversion_delay_ms);
  return sha256_hex(packed);
}

FispSchedule default_schedule() {
  FispSchedule s;
  constexpr std::size_t n = 600;
  for (std::size_t i = 0; i < n; ++i) {
    s.flip_angles_deg.push_back(10.0 + 50.0 * std::abs(std::sin(std::numbers::pi * static_cast<double>(i) / 250.0)));
    s.tr_ms.push_back(12.0);
    s.te_ms.push_back(2.0);
  }
  s.inversion = true;
  s.inversion_delay_ms = 40.0;
  return s;
}

EpgState::EpgState(std::size_t max_order, double m0)
    : max_order_(max_order), f_plus_(max_order + 1), f_minus_(max_order + 1), z_(max_order + 1) {
  z_[0] = m0;
}

void EpgState::invert() {
  // Ideal spoiled inversion: only longitudinal states survive, with sign flip.
  for (std::size_t k = 0; k < active_; ++k) {
    z_[k] = -z_[k];
    f_plus_[k] = 0.0;
    f_minus_[k] = 0.0;
  }
}

void EpgState::rotate(double flip_rad) {
  const double c = std::cos(flip_rad);
  const double s = std::sin(flip_rad);
  const double c2 = std::cos(flip_rad / 2.0) * std::cos(flip_rad / 2.0);
  const double s2 = std::sin(flip_rad / 2.0) * std::sin(flip_rad / 2.0);
  const Complex i_unit(0.0, 1.0);
  for (std::size_t k = 0; k < active_; ++k) {
    const Complex fp = f_plus_[k], fm = f_minus_[k], z = z_[k];
    f_plus_[k] = c2 * fp + s2 * fm - i_unit * s * z;
    f_minus_[k] = s2 * fp + c2 * fm + i_unit * s * z;
    z_[k] = -0.5 * i_unit * s * fp + 0.5 * i_unit * s * fm + c * z;
  }
}

void EpgState::relax(double dt_ms, double t1_ms, double t2_ms, double m0) {
  const double e1 = std::exp(-dt_ms / t1_ms);
  const double e2 = std::exp(-dt_ms / t2_ms);
  for (std::size_t k = 0; k < active_; ++k) {
    f_plus_[k] *= e2;
    f_minus_[k] *= e2;
    z_[k] *= e1;
  }
  z_[0] += m0 * (1.0 - e1);
}

void EpgState::dephase() {
  // Highest populated order after the shift; F+ leaving max_order_ is dropped.
  const std::size_t top = std::min(active_, max_order_);
  for (std::size_t k = top; k >= 1; --k) f_plus_[k] = f_plus_[k - 1];
  for (std::size_t k = 0; k < top; ++k) f_minus_[k] = f_minus_[k + 1];
  f_minus_[top] = 0.0;
  f_plus_[0] = std::conj(f_minus_[0]);
  active_ = top + 1;
}

double EpgState::power() const {
  double p = 0.0;
  for (std::size_t k = 0; k <= max_order_; ++k) {
    p += 0.5 * (std::norm(f_plus_[k]) + std::norm(f_minus_[k])) + std::norm(z_[k]);
  }
  return p;
}

std::size_t default_state_cap(const FispSchedule& schedule) { return std::min<std::size_t>(schedule.n_tr(), 100); }

std::vector<Complex> epg_fisp(const TissueParams& params, const FispSchedule& schedule, std::size_t state_cap) {
  schedule.validate();
  if (!(params.t1_ms > 0.0) || !(params.t2_ms > 0.0)) throw std::invalid_argument("epg_fisp: T1 and T2 must be positive");
  const std::size_t cap = state_cap == 0 ? default_state_cap(schedule) : state_cap;
  const double m0 = params.m0;
  EpgState state(cap, m0);
  if (schedule.inversion) {
    state.invert();
    state.relax(schedule.inversion_delay_ms, params.t1_ms, params.t2_ms, m0);
  }
  const Complex phase = std::polar(1.0, params.phase_rad);
  std::vector<Complex> signal(schedule.n_tr());
  const double deg = std::numbers::pi / 180.0;
  for (std::size_t i = 0; i < schedule.n_tr(); ++i) {
    state.rotate(schedule.flip_angles_deg[i] * deg);
    state.relax(schedule.te_ms[i], params.t1_ms, params.t2_ms, m0);
    signal[i] = phase * state.signal();
    state.relax(schedule.tr_ms[i] - schedule.te_ms[i], params.t1_ms, params.t2_ms, m0);
    state.dephase();
  }
  return signal;
}

DictionaryGrid DictionaryGrid::range(double t1_min, double t1_max, double t1_step, double t2_min, double t2_max,
                                     double t2_step) {
  auto axis = [](double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo > 0.0) || hi < lo) throw std::invalid_argument("invalid dictionary grid axis");
    std::vector<double> v;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) v.push_back(lo + step * static_cast<double>(i));
    return v;
  };
  return {axis(t1_min, t1_max, t1_step), axis(t2_min, t2_max, t2_step)};
}

DictionaryGrid DictionaryGrid::default_grid() { return range(100.0, 3000.0, 20.0, 10.0, 300.0, 2.0); }

Dictionary Dictionary::from_atoms(std::vector<double> t1_ms, std::vector<double> t2_ms, std::size_t timepoints,
                                  std::vector<Complex> atoms) {
  if (t1_ms.size() != t2_ms.size() || atoms.size() != t1_ms.size() * timepoints) {
    throw std::invalid_argument("dictionary atoms do not match the grid");
  }
  if (t1_ms.empty()) throw std::invalid_argument("dictionary has no atoms");
  Dictionary d;
  d.t1_ms = std::move(t1_ms);
  d.t2_ms = std::move(t2_ms);
  d.timepoints = timepoints;
  d.atoms = std::move(atoms);
  d.unit_atoms.resize(d.atoms.size());
  d.norms.resize(d.size());
  for (std::size_t a = 0; a < d.size(); ++a) {
    double energy = 0.0;
    for (std::size_t t = 0; t < timepoints; ++t) energy += std::norm(d.atoms[a * timepoints + t]);
    const double norm = std::sqrt(energy);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw std::domain_error("dictionary atom " + std::to_string(a) + " has zero or non-finite norm");
    }
    d.norms[a] = norm;
    for (std::size_t t = 0; t < timepoints; ++t) d.unit_atoms[a * timepoints + t] = d.atoms[a * timepoints + t] / norm;
  }
  return d;
}

Dictionary generate_dictionary(const DictionaryGrid& grid, const FispSchedule& schedule, std::size_t threads,
                               std::size_t state_cap) {
  schedule.validate();
  std::vector<double> t1s, t2s;
  for (double t1 : grid.t1_ms) {
    for (double t2 : grid.t2_ms) {
      if (t2 <= t1) {
        t1s.push_back(t1);
        t2s.push_back(t2);
      }
    }
  }
  if (t1s.empty()) throw std::invalid_argument("dictionary grid has no admissible (T1, T2) pair");
  const std::size_t n_tr = schedule.n_tr();
  std::vector<Complex> atoms(t1s.size() * n_tr);
  parallel_for(t1s.size(), threads, [&](std::size_t a) {
    const auto s = epg_fisp({t1s[a], t2s[a], 1.0, 0.0}, schedule, state_cap);
    std::copy(s.begin(), s.end(), atoms.begin() + static_cast<std::ptrdiff_t>(a * n_tr));
  });
  Dictionary d = Dictionary::from_atoms(std::move(t1s), std::move(t2s), n_tr, std::move(atoms));
  d.schedule_fingerprint = schedule.fingerprint();
  return d;
}

}  // namespace qfit::physics
