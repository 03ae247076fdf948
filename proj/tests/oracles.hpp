#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "qfit/signal_models.hpp"

namespace qfit::oracles {

// Brute-force Bloch simulation of N isochromats whose phases are spread
// uniformly over 2*pi by the unbalanced gradient of each TR.
inline std::vector<Complex> isochromat_fisp(const physics::TissueParams& p, const physics::FispSchedule& s, std::size_t spins) {
  std::vector<double> mx(spins, 0.0), my(spins, 0.0), mz(spins, p.m0);
  auto relax = [&](double dt) {
    const double e1 = std::exp(-dt / p.t1_ms), e2 = std::exp(-dt / p.t2_ms);
    for (std::size_t j = 0; j < spins; ++j) {
      mx[j] *= e2;
      my[j] *= e2;
      mz[j] = mz[j] * e1 + p.m0 * (1.0 - e1);
    }
  };
  if (s.inversion) {
    for (double& z : mz) z = -z;
    relax(s.inversion_delay_ms);
  }
  std::vector<Complex> out;
  for (std::size_t i = 0; i < s.n_tr(); ++i) {
    const double a = s.flip_angles_deg[i] * std::numbers::pi / 180.0;
    for (std::size_t j = 0; j < spins; ++j) {
      const double y = my[j], z = mz[j];
      my[j] = y * std::cos(a) - z * std::sin(a);
      mz[j] = y * std::sin(a) + z * std::cos(a);
    }
    relax(s.te_ms[i]);
    Complex sum = 0.0;
    for (std::size_t j = 0; j < spins; ++j) sum += Complex(mx[j], my[j]);
    out.push_back(sum / static_cast<double>(spins));
    relax(s.tr_ms[i] - s.te_ms[i]);
    for (std::size_t j = 0; j < spins; ++j) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(spins);
      const Complex m = Complex(mx[j], my[j]) * std::polar(1.0, th);
      mx[j] = m.real();
      my[j] = m.imag();
    }
  }
  return out;
}

}  // namespace qfit::oracles
