#include "qfit/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "qfit/parallel.hpp"

namespace qfit::fit {

void T2Bounds::validate() const {
  if (!(min_ms > 0.0) || !(max_ms > min_ms)) throw std::invalid_argument("T2 bounds must satisfy 0 < min < max");
}

namespace {

void require_length(std::span<const double> signal, const physics::EchoProtocol& protocol) {
  protocol.validate();
  if (signal.size() != protocol.size()) {
    throw std::invalid_argument("signal has " + std::to_string(signal.size()) + " echoes, protocol " +
                                std::to_string(protocol.size()));
  }
}

struct Projection {
  double objective;  // ||s||^2 - <s,e>^2 / <e,e>
  double amplitude;  // <s,e> / <e,e>
};

Projection project_decay(std::span<const double> s, double energy, const std::vector<double>& te, double t2) {
  double se = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double e = std::exp(-te[i] / t2);
    se += s[i] * e;
    ee += e * e;
  }
  return {energy - se * se / ee, se / ee};
}

double residual(std::span<const double> s, const std::vector<double>& te, double m0, double t2) {
  double r = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - m0 * std::exp(-te[i] / t2);
    r += d * d;
  }
  return std::sqrt(r);
}

}  // namespace

FitResult varpro_fit(std::span<const double> signal, const physics::EchoProtocol& protocol,
                     const VarproOptions& options) {
  require_length(signal, protocol);
  options.bounds.validate();
  if (protocol.size() < 2) throw std::invalid_argument("varpro_fit needs at least two echoes");
  if (options.grid_points < 3) throw std::invalid_argument("varpro_fit needs at least three grid points");

  double energy = 0.0;
  for (double v : signal) energy += v * v;
  if (energy == 0.0) return {};

  const auto& te = protocol.echo_times_ms;
  const double log_lo = std::log(options.bounds.min_ms);
  const double log_hi = std::log(options.bounds.max_ms);
  const std::size_t n = options.grid_points;
  auto grid_at = [&](std::size_t i) {
    if (i == n - 1) return options.bounds.max_ms;
    return std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  };

  std::size_t best = 0;
  double best_obj = project_decay(signal, energy, te, grid_at(0)).objective;
  for (std::size_t i = 1; i < n; ++i) {
    const double obj = project_decay(signal, energy, te, grid_at(i)).objective;
    if (obj < best_obj) {
      best_obj = obj;
      best = i;
    }
  }

  double a = grid_at(best == 0 ? 0 : best - 1);
  double b = grid_at(best + 1 >= n ? n - 1 : best + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = project_decay(signal, energy, te, c).objective;
  double fd = project_decay(signal, energy, te, d).objective;
  while (b - a > options.tolerance_ms) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = project_decay(signal, energy, te, c).objective;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = project_decay(signal, energy, te, d).objective;
    }
  }
  double t2 = 0.5 * (a + b);
  if (project_decay(signal, energy, te, t2).objective > best_obj) t2 = grid_at(best);

  FitResult r;
  r.t2_ms = t2;
  r.m0 = project_decay(signal, energy, te, t2).amplitude;
  r.residual_norm = residual(signal, te, r.m0, t2);
  r.converged = true;
  return r;
}

FitResult loglinear_fit(std::span<const double> signal, const physics::EchoProtocol& protocol,
                        const T2Bounds& bounds) {
  require_length(signal, protocol);
  bounds.validate();
  if (protocol.size() < 2) throw std::invalid_argument("loglinear_fit needs at least two echoes");
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (!(signal[i] > 0.0)) {
      throw std::domain_error("loglinear_fit: non-positive sample " + std::to_string(signal[i]) + " at echo " +
                              std::to_string(i));
    }
  }
  // Minimize sum w_i (ln s_i - a + b TE_i)^2 with w_i = s_i^2.
  double sw = 0.0, swx = 0.0, swxx = 0.0, swy = 0.0, swxy = 0.0;
  const auto& te = protocol.echo_times_ms;
  for (std::size_t i = 0; i < signal.size(); ++i) {
    const double w = signal[i] * signal[i];
    const double y = std::log(signal[i]);
    sw += w;
    swx += w * te[i];
    swxx += w * te[i] * te[i];
    swy += w * y;
    swxy += w * te[i] * y;
  }
  const double det = sw * swxx - swx * swx;
  const double slope = (sw * swxy - swx * swy) / det;  // = -1 / T2
  const double intercept = (swy - slope * swx) / sw;

  FitResult r;
  r.m0 = std::exp(intercept);
  if (!(slope < 0.0)) {
    r.t2_ms = bounds.max_ms;
    r.converged = false;
  } else {
    const double t2 = -1.0 / slope;
    r.t2_ms = std::clamp(t2, bounds.min_ms, bounds.max_ms);
    r.converged = t2 >= bounds.min_ms && t2 <= bounds.max_ms;
  }
  r.residual_norm = residual(signal, te, r.m0, r.t2_ms);
  return r;
}

MatchResult dict_match_full(std::span<const Complex> signal, const physics::Dictionary& dictionary) {
  if (dictionary.size() == 0) throw std::invalid_argument("dict_match_full: empty dictionary");
  if (signal.size() != dictionary.timepoints) {
    throw std::invalid_argument("dict_match_full: signal length " + std::to_string(signal.size()) +
                                " does not match dictionary length " + std::to_string(dictionary.timepoints));
  }
  double energy = 0.0;
  for (const Complex& v : signal) energy += std::norm(v);
  const double signal_norm = std::sqrt(energy);

  MatchResult best;
  double best_score = -1.0;
  Complex best_inner = 0.0;
  for (std::size_t a = 0; a < dictionary.size(); ++a) {
    const auto atom = dictionary.unit_atom(a);
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < atom.size(); ++t) {
      // conj(atom) * s
      re += atom[t].real() * signal[t].real() + atom[t].imag() * signal[t].imag();
      im += atom[t].real() * signal[t].imag() - atom[t].imag() * signal[t].real();
    }
    const Complex inner(re, im);
    const double score = signal_norm > 0.0 ? std::abs(inner) / signal_norm : 0.0;
    if (score > best_score) {
      best_score = score;
      best.index = a;
      best_inner = inner;
    }
  }
  best.t1_ms = dictionary.t1_ms[best.index];
  best.t2_ms = dictionary.t2_ms[best.index];
  best.score = best_score;
  best.scale = best_inner / dictionary.norms[best.index];
  return best;
}

FitMaps fit_volume(const ContrastStack& stack, const physics::EchoProtocol& protocol, const Mask* mask,
                   const VolumeFitOptions& options) {
  stack.validate();
  protocol.validate();
  if (stack.is_complex()) throw std::invalid_argument("fit_volume expects magnitude (real) multi-echo data");
  if (stack.frames != protocol.size()) throw std::invalid_argument("fit_volume: echo count mismatch");
  const std::size_t plane = stack.plane();
  if (mask && mask->size() != plane) throw std::invalid_argument("fit_volume: mask size mismatch");

  FitMaps maps{ParameterMap::filled(stack.height, stack.width, 0.0, "M0", "a.u."),
               ParameterMap::filled(stack.height, stack.width, 0.0, "T2", "ms")};
  std::fill(maps.m0.valid.begin(), maps.m0.valid.end(), 0);
  std::fill(maps.t2.valid.begin(), maps.t2.valid.end(), 0);

  parallel_for(plane, options.threads, [&](std::size_t p) {
    if (mask && !(*mask)[p]) return;
    std::vector<double> s(stack.frames);
    for (std::size_t e = 0; e < stack.frames; ++e) s[e] = stack.real[e * plane + p];
    FitResult r;
    try {
      r = options.method == Method::kVarpro ? varpro_fit(s, protocol, options.varpro)
                                            : loglinear_fit(s, protocol, options.varpro.bounds);
    } catch (const std::domain_error&) {
      return;
    }
    maps.m0.values[p] = r.m0;
    maps.t2.values[p] = r.t2_ms;
    maps.m0.valid[p] = r.converged ? 1 : 0;
    maps.t2.valid[p] = r.converged ? 1 : 0;
  });
  return maps;
}

}  // namespace qfit::fit
