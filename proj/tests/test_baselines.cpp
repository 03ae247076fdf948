#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qfit/baselines.hpp"
#include "qfit/phantom.hpp"
#include "qfit/subspace.hpp"

using namespace qfit;
using namespace qfit::fit;
using physics::EchoProtocol;

namespace {

const EchoProtocol kTenEcho = EchoProtocol::uniform(6.0, 6.0, 10);
const EchoProtocol kFourEcho = EchoProtocol::uniform(43.0, 24.0, 4);

const physics::Dictionary& small_dictionary() {
  static const physics::Dictionary d = physics::generate_dictionary(
      physics::DictionaryGrid::range(100.0, 3000.0, 100.0, 10.0, 400.0, 10.0), physics::default_schedule().truncated(300));
  return d;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(Varpro, NoiselessFourEchoRecovery) {
  const auto s = physics::mono_exp_decay(100.0, 80.0, kFourEcho);
  const FitResult r = varpro_fit(s, kFourEcho);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.m0, 100.0, 1e-3 * 100.0);
  EXPECT_NEAR(r.t2_ms, 80.0, 1e-3 * 80.0);
  EXPECT_GE(r.residual_norm, 0.0);
}

TEST(Varpro, NoiselessSweepBothProtocols) {
  for (const EchoProtocol* proto : {&kTenEcho, &kFourEcho}) {
    for (int i = 0; i < 20; ++i) {
      const double m0 = 0.1 + 0.5 * i;
      for (int j = 0; j < 20; ++j) {
        const double t2 = 10.0 * std::pow(30.0, j / 19.0);
        const auto s = physics::mono_exp_decay(m0, t2, *proto);
        const FitResult v = varpro_fit(s, *proto);
        EXPECT_LT(std::abs(v.t2_ms - t2) / t2, 1e-3);
        EXPECT_LT(std::abs(v.m0 - m0) / m0, 1e-3);
        const FitResult l = loglinear_fit(s, *proto);
        EXPECT_LT(std::abs(l.t2_ms - t2) / t2, 1e-9);
        EXPECT_LT(std::abs(l.m0 - m0) / m0, 1e-9);
      }
    }
  }
}

TEST(Varpro, ZeroSignalIsUnconverged) {
  const std::vector<double> s(4, 0.0);
  const FitResult r = varpro_fit(s, kFourEcho);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.m0, 0.0);
}

TEST(Varpro, ScaleInvariantArgmin) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.02);
  auto s = physics::mono_exp_decay(1.0, 60.0, kTenEcho);
  for (double& v : s) v += g(rng);
  const FitResult a = varpro_fit(s, kTenEcho);
  for (double alpha : {0.01, 3.0, 250.0}) {
    std::vector<double> scaled(s);
    for (double& v : scaled) v *= alpha;
    const FitResult b = varpro_fit(scaled, kTenEcho);
    EXPECT_NEAR(b.t2_ms, a.t2_ms, 1e-6 * a.t2_ms);
    EXPECT_NEAR(b.m0, alpha * a.m0, 1e-6 * alpha * a.m0);
  }
}

TEST(Varpro, MatchesDenseGridOracleOnNoisyData) {
  // Oracle: M0 eliminated exactly, T2 scanned every 0.01 ms over the bounds.
  const std::size_t E = kFourEcho.size();
  const double step = 0.01, lo = 1.0, hi = 3000.0;
  const auto n = static_cast<std::size_t>((hi - lo) / step) + 1;
  std::vector<double> basis(n * E), ee(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t2 = lo + step * static_cast<double>(k);
    for (std::size_t e = 0; e < E; ++e) {
      const double v = std::exp(-kFourEcho.echo_times_ms[e] / t2);
      basis[k * E + e] = v;
      ee[k] += v * v;
    }
  }
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, std::sqrt(0.001));
  std::uniform_real_distribution<double> t2_dist(40.0, 150.0);
  std::vector<double> diffs;
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = physics::mono_exp_decay(1.0, t2_dist(rng), kFourEcho);
    for (double& v : s) v += noise(rng);
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < n; ++k) {
      double se = 0.0;
      for (std::size_t e = 0; e < E; ++e) se += s[e] * basis[k * E + e];
      const double explained = se * se / ee[k];
      if (explained > best) {
        best = explained;
        arg = k;
      }
    }
    diffs.push_back(std::abs(varpro_fit(s, kFourEcho).t2_ms - (lo + step * static_cast<double>(arg))));
  }
  EXPECT_LT(median(diffs), 0.05);
}

TEST(LogLinear, TwoEchoClosedForm) {
  const EchoProtocol p{{10.0, 30.0}};
  const std::vector<double> s = {0.8, 0.3};
  const FitResult r = loglinear_fit(s, p);
  const double t2 = 20.0 / std::log(0.8 / 0.3);
  EXPECT_NEAR(r.t2_ms, t2, 1e-9 * t2);
  EXPECT_NEAR(r.m0, 0.8 * std::exp(10.0 / t2), 1e-9);
}

TEST(LogLinear, RejectsNonPositiveSamples) {
  EXPECT_THROW(loglinear_fit(std::vector<double>{1.0, 0.5, 0.0, 0.1}, kFourEcho), std::domain_error);
  EXPECT_THROW(loglinear_fit(std::vector<double>{1.0, -0.5, 0.2, 0.1}, kFourEcho), std::domain_error);
}

TEST(LogLinear, AgreesWithVarproAtHighSnr) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t2_dist(40.0, 150.0);
  std::normal_distribution<double> noise(0.0, 1.0 / 30.0);
  std::vector<double> rel;
  for (int trial = 0; trial < 500; ++trial) {
    auto s = physics::mono_exp_decay(1.0, t2_dist(rng), kTenEcho);
    for (double& v : s) v = std::max(v + noise(rng) * s[0], 1e-6);
    const double a = loglinear_fit(s, kTenEcho).t2_ms, b = varpro_fit(s, kTenEcho).t2_ms;
    rel.push_back(std::abs(a - b) / b);
  }
  EXPECT_LT(median(rel), 0.05);
}

TEST(DictMatch, SelfMatchScaleAndPhase) {
  const auto& d = small_dictionary();
  for (std::size_t a = 0; a < d.size(); a += 53) {
    const auto atom = d.atom(a);
    const MatchResult m = dict_match_full(atom, d);
    EXPECT_EQ(m.index, a);
    EXPECT_NEAR(std::abs(m.scale - 1.0), 0.0, 1e-12);
    std::vector<Complex> s(atom.begin(), atom.end());
    const Complex z = 0.4 * std::polar(1.0, -2.0);
    for (Complex& v : s) v *= z;
    const MatchResult ms = dict_match_full(s, d);
    EXPECT_EQ(ms.t1_ms, d.t1_ms[a]);
    EXPECT_EQ(ms.t2_ms, d.t2_ms[a]);
    EXPECT_NEAR(std::abs(ms.scale - z), 0.0, 1e-12);
  }
  EXPECT_THROW(dict_match_full(std::vector<Complex>(d.timepoints + 1), d), std::invalid_argument);
}

TEST(DictMatch, CompressedAgreesOnNoiselessAtoms) {
  const auto& d = small_dictionary();
  const auto b = subspace::compress_dictionary(d, 0.95);
  const auto cd = subspace::compress_atoms(d, b);
  std::size_t agree = 0;
  for (std::size_t a = 0; a < d.size(); ++a) {
    agree += dict_match_full(d.atom(a), d).index == subspace::match_compressed(subspace::project(d.atom(a), b), cd).index;
  }
  EXPECT_GE(static_cast<double>(agree), 0.99 * static_cast<double>(d.size()));
}

TEST(FitVolume, UniformPhantomMatchesScalarFit) {
  const ParameterMap m0 = ParameterMap::filled(4, 5, 0.9), t2 = ParameterMap::filled(4, 5, 75.0);
  const ContrastStack s = physics::mono_exp_synth(m0, t2, kTenEcho);
  const FitMaps maps = fit_volume(s, kTenEcho, nullptr);
  const FitResult ref = varpro_fit(physics::mono_exp_decay(0.9, 75.0, kTenEcho), kTenEcho);
  for (std::size_t p = 0; p < 20; ++p) {
    EXPECT_TRUE(maps.t2.valid[p]);
    EXPECT_EQ(maps.t2.values[p], ref.t2_ms);
    EXPECT_EQ(maps.m0.values[p], ref.m0);
  }
}

TEST(FitVolume, MaskedVoxelsAreInvalidAndExcluded) {
  const ParameterMap m0 = ParameterMap::filled(2, 2, 1.0), t2 = ParameterMap::filled(2, 2, 50.0);
  const ContrastStack s = physics::mono_exp_synth(m0, t2, kTenEcho);
  const Mask mask = {1, 0, 1, 1};
  const FitMaps maps = fit_volume(s, kTenEcho, &mask);
  EXPECT_FALSE(maps.t2.valid[1]);
  EXPECT_TRUE(maps.t2.valid[0]);
  ParameterMap truth = t2;
  truth.values[1] = 1e9;
  EXPECT_LT(phantom::rmse(maps.t2, truth, mask), 1e-2);
}

TEST(FitVolume, ParallelRunReproducesScalarCalls) {
  phantom::Phantom ph = phantom::make_phantom(phantom::PhantomSpec::brain(24, 24, 3));
  ContrastStack s = physics::mono_exp_synth(ph.m0, ph.t2, kTenEcho, &ph.mask);
  s = phantom::add_gaussian_noise(s, 1e-3, 5);
  for (Method method : {Method::kVarpro, Method::kLogLinear}) {
    VolumeFitOptions serial;
    serial.method = method;
    VolumeFitOptions parallel = serial;
    parallel.threads = 4;
    const FitMaps a = fit_volume(s, kTenEcho, &ph.mask, serial), b = fit_volume(s, kTenEcho, &ph.mask, parallel);
    EXPECT_EQ(a.t2.values, b.t2.values);
    EXPECT_EQ(a.m0.values, b.m0.values);
    EXPECT_EQ(a.t2.valid, b.t2.valid);
    for (std::size_t p = 0; p < ph.mask.size(); p += 7) {
      if (!ph.mask[p]) continue;
      std::vector<double> v(kTenEcho.size());
      for (std::size_t e = 0; e < v.size(); ++e) v[e] = s.real[e * s.plane() + p];
      if (method == Method::kVarpro) {
        EXPECT_EQ(a.t2.values[p], varpro_fit(v, kTenEcho).t2_ms);
      } else if (a.t2.valid[p]) {
        EXPECT_EQ(a.t2.values[p], loglinear_fit(v, kTenEcho).t2_ms);
      }
    }
  }
}
