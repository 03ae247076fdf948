#pragma once

#include <span>
#include <string>
#include <vector>

#include "qfit/tensor.hpp"
#include "qfit/types.hpp"

namespace qfit::physics {

struct EchoProtocol {
  std::vector<double> echo_times_ms;

  static EchoProtocol uniform(double first_te_ms, double spacing_ms, std::size_t count);
  std::size_t size() const { return echo_times_ms.size(); }
  // Strictly increasing and positive.
  void validate() const;
};

double mono_exp(double m0, double t2_ms, double te_ms);
std::vector<double> mono_exp_decay(double m0, double t2_ms, const EchoProtocol& protocol);

/// stack[e] = m0 * exp(-TE_e / t2). Voxels outside `mask` are zero; t2 must
/// be positive inside it.
ContrastStack mono_exp_synth(const ParameterMap& m0, const ParameterMap& t2, const EchoProtocol& protocol,
                             const Mask* mask = nullptr);

/// Differentiable form: m0, t2 of shape (N, 1, H, W) -> (N, E, H, W).
ad::Tensor mono_exp_synth(const ad::Tensor& m0, const ad::Tensor& t2, const EchoProtocol& protocol);

struct FispSchedule {
  std::vector<double> flip_angles_deg;
  std::vector<double> tr_ms;
  std::vector<double> te_ms;
  bool inversion = true;
  double inversion_delay_ms = 40.0;

  std::size_t n_tr() const { return flip_angles_deg.size(); }
  void validate() const;
  FispSchedule truncated(std::size_t n) const;
  // Stable textual digest used to tie dictionaries to their schedule.
  std::string fingerprint() const;
};

/// 600 TRs after an inversion: flip = 10 + 50 |sin(pi i / 250)| deg,
/// TR = 12 ms, TE = 2 ms.
FispSchedule default_schedule();

struct TissueParams {
  double t1_ms = 1000.0;
  double t2_ms = 100.0;
  double m0 = 1.0;
  double phase_rad = 0.0;
};

/// Extended phase graph with dephasing orders 0..max_order. RF rotations are
/// about x; F-_0 is kept as the conjugate of F+_0.
class EpgState {
 public:
  explicit EpgState(std::size_t max_order, double m0 = 1.0);

  void invert();
  void rotate(double flip_rad);
  void relax(double dt_ms, double t1_ms, double t2_ms, double m0);
  // Unbalanced gradient: F+_k -> F+_{k+1}, F-_k -> F-_{k-1}.
  void dephase();

  Complex signal() const { return f_plus_[0]; }
  // Sum over k of (|F+_k|^2 + |F-_k|^2) / 2 + |Z_k|^2.
  double power() const;

  std::size_t max_order() const { return max_order_; }
  std::span<const Complex> f_plus() const { return f_plus_; }
  std::span<const Complex> f_minus() const { return f_minus_; }
  std::span<const Complex> z() const { return z_; }

 private:
  std::size_t max_order_;
  std::size_t active_ = 1;
  std::vector<Complex> f_plus_;
  std::vector<Complex> f_minus_;
  std::vector<Complex> z_;
};

std::size_t default_state_cap(const FispSchedule& schedule);

/// FISP time course sampled at TE of every TR. state_cap 0 selects
/// default_state_cap(schedule).
std::vector<Complex> epg_fisp(const TissueParams& params, const FispSchedule& schedule,
                              std::size_t state_cap = 0);

struct DictionaryGrid {
  std::vector<double> t1_ms;
  std::vector<double> t2_ms;

  static DictionaryGrid range(double t1_min, double t1_max, double t1_step, double t2_min, double t2_max,
                              double t2_step);
  // T1 100..3000 step 20, T2 10..300 step 2.
  static DictionaryGrid default_grid();
};

struct Dictionary {
  std::vector<double> t1_ms;
  std::vector<double> t2_ms;
  std::size_t timepoints = 0;
  std::vector<Complex> atoms;
  std::vector<Complex> unit_atoms;
  std::vector<double> norms;
  std::string schedule_fingerprint;

  /// Builds the normalized copies and norms from raw atoms (row-major).
  static Dictionary from_atoms(std::vector<double> t1_ms, std::vector<double> t2_ms, std::size_t timepoints,
                               std::vector<Complex> atoms);

  std::size_t size() const { return t1_ms.size(); }
  std::span<const Complex> atom(std::size_t i) const { return {atoms.data() + i * timepoints, timepoints}; }
  std::span<const Complex> unit_atom(std::size_t i) const {
    return {unit_atoms.data() + i * timepoints, timepoints};
  }
};

/// One atom per (T1, T2) pair with t2 <= t1, ordered T1-major.
Dictionary generate_dictionary(const DictionaryGrid& grid, const FispSchedule& schedule, std::size_t threads = 1,
                               std::size_t state_cap = 0);

}  // namespace qfit::physics
