#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "qfit/ops.hpp"
#include "qfit/phantom.hpp"
#include "qfit/training.hpp"

using namespace qfit;
using namespace qfit::train;

namespace {

const physics::EchoProtocol kTenEcho = physics::EchoProtocol::uniform(6.0, 6.0, 10);

phantom::Phantom two_region_phantom(std::size_t n) {
  phantom::PhantomSpec spec;
  spec.height = n;
  spec.width = n;
  spec.variation = 0.0;
  spec.regions = {{"outer", 0.0, 0.0, 0.85, 0.85, 0.0, {1000.0, 60.0, 0.8, 0.0}},
                  {"inner", 0.1, 0.0, 0.4, 0.35, 0.0, {1500.0, 140.0, 1.0, 0.0}}};
  return phantom::make_phantom(spec);
}

RelaxometryTask small_relaxometry_task(std::size_t n, std::size_t iterations, double variance = 0.0) {
  const phantom::Phantom ph = two_region_phantom(n);
  RelaxometryTask task;
  task.input = physics::mono_exp_synth(ph.m0, ph.t2, kTenEcho, &ph.mask);
  task.input = phantom::add_gaussian_noise(task.input, variance, 3);
  task.protocol = kTenEcho;
  task.network = relaxometry_network_config(10, 8, 2);
  task.training.iterations = iterations;
  task.training.seed = 5;
  return task;
}

}  // namespace

TEST(Percentile, MagnitudeQuantile) {
  ContrastStack s = ContrastStack::zeros(1, 10, 10, false);
  for (std::size_t i = 0; i < 100; ++i) s.real[i] = (i % 2 ? -1.0 : 1.0) * static_cast<double>(i + 1);
  EXPECT_NEAR(percentile_magnitude(s, 0.99), 99.0, 1.0);
  EXPECT_NEAR(percentile_magnitude(s, 1.0), 100.0, 1e-12);
}

TEST(RelaxometryObjective, OracleMapsReduceToPlainSsim) {
  const phantom::Phantom ph = two_region_phantom(16);
  const ContrastStack clean = physics::mono_exp_synth(ph.m0, ph.t2, kTenEcho, &ph.mask);
  const ContrastStack noisy = phantom::add_gaussian_noise(clean, 1e-3, 1);
  std::vector<double> maps(ph.m0.values);
  for (std::size_t p = 0; p < ph.t2.size(); ++p) maps.push_back(ph.mask[p] ? ph.t2.values[p] : 50.0);
  const ad::Tensor m = ad::Tensor::constant({1, 2, 16, 16}, maps);
  const ad::Tensor target = ad::Tensor::constant({1, 10, 16, 16}, noisy.real);
  const ad::Tensor resynth = ad::Tensor::constant({1, 10, 16, 16}, clean.real);
  const nn::SsimConfig cfg = nn::SsimConfig::for_range(1.0);
  EXPECT_DOUBLE_EQ(relaxometry_objective(m, target, kTenEcho, cfg).item(),
                   nn::ssim_loss(resynth, target, cfg).item());
}

TEST(RelaxometryObjective, InvariantToBatchPermutation) {
  phantom::Phantom a = two_region_phantom(12);
  phantom::Phantom b = a;
  for (double& v : b.t2.values) v = std::max(v * 1.3, 5.0);
  for (double& v : a.t2.values) v = std::max(v, 5.0);
  auto planes = [](const phantom::Phantom& p) {
    std::vector<double> v(p.m0.values);
    v.insert(v.end(), p.t2.values.begin(), p.t2.values.end());
    return v;
  };
  auto batch = [](std::vector<double> first, const std::vector<double>& second) {
    first.insert(first.end(), second.begin(), second.end());
    return first;
  };
  const auto target_a = physics::mono_exp_synth(a.m0, a.t2, kTenEcho).real;
  const auto target_b = phantom::add_gaussian_noise(physics::mono_exp_synth(b.m0, b.t2, kTenEcho), 1e-3, 2).real;
  const nn::SsimConfig cfg;
  const double ab = relaxometry_objective(ad::Tensor::constant({2, 2, 12, 12}, batch(planes(a), planes(b))),
                                          ad::Tensor::constant({2, 10, 12, 12}, batch(target_a, target_b)), kTenEcho, cfg)
                        .item();
  const double ba = relaxometry_objective(ad::Tensor::constant({2, 2, 12, 12}, batch(planes(b), planes(a))),
                                          ad::Tensor::constant({2, 10, 12, 12}, batch(target_b, target_a)), kTenEcho, cfg)
                        .item();
  EXPECT_NEAR(ab, ba, 1e-14);
  const double single = relaxometry_objective(ad::Tensor::constant({1, 2, 12, 12}, planes(b)),
                                              ad::Tensor::constant({1, 10, 12, 12}, target_b), kTenEcho, cfg)
                            .item();
  const double dup = relaxometry_objective(ad::Tensor::constant({2, 2, 12, 12}, batch(planes(b), planes(b))),
                                           ad::Tensor::constant({2, 10, 12, 12}, batch(target_b, target_b)), kTenEcho, cfg)
                         .item();
  EXPECT_NEAR(single, dup, 1e-14);
}

TEST(TrainRelaxometry, BestIterateAndCheckpoint) {
  const RelaxometryTask task = small_relaxometry_task(16, 40, 1e-3);
  const RelaxometryResult r = train_relaxometry(task);
  ASSERT_FALSE(r.loss_history.empty());
  EXPECT_LE(r.loss_history.size(), 40u);
  EXPECT_EQ(r.best_loss, *std::min_element(r.loss_history.begin(), r.loss_history.end()));
  EXPECT_EQ(r.loss_history[r.best_iteration], r.best_loss);
  EXPECT_LE(r.best_loss, r.loss_history.back());
  EXPECT_LT(r.best_loss, r.loss_history.front());
  const nn::MappingNetwork net(task.network, 0);
  EXPECT_EQ(r.checkpoint.parameters.size(), net.parameters().size());
  EXPECT_EQ(r.checkpoint.optimizer.step, r.loss_history.size());
  EXPECT_EQ(r.checkpoint.loss_history, r.loss_history);
  for (std::size_t p = 0; p < r.t2.size(); ++p) {
    EXPECT_GE(r.t2.values[p], 1.0);
    EXPECT_LE(r.t2.values[p], 3000.0);
    EXPECT_GE(r.m0.values[p], 0.0);
  }
}

TEST(TrainRelaxometry, SeedFixedRunsAreBitIdentical) {
  const RelaxometryTask task = small_relaxometry_task(16, 15, 1e-3);
  const RelaxometryResult a = train_relaxometry(task), b = train_relaxometry(task);
  EXPECT_EQ(a.t2.values, b.t2.values);
  EXPECT_EQ(a.m0.values, b.m0.values);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(TrainRelaxometry, ConfigurationErrors) {
  RelaxometryTask task = small_relaxometry_task(16, 5);
  task.network = relaxometry_network_config(9, 8, 2);
  EXPECT_THROW(train_relaxometry(task), ConfigurationError);
  task = small_relaxometry_task(16, 5);
  task.training.learning_rate = 0.0;
  EXPECT_THROW(train_relaxometry(task), ConfigurationError);
  task = small_relaxometry_task(16, 5);
  task.protocol = physics::EchoProtocol::uniform(6.0, 6.0, 4);
  EXPECT_THROW(train_relaxometry(task), ConfigurationError);
}

TEST(TrainRelaxometry, DivergenceIsReported) {
  RelaxometryTask task = small_relaxometry_task(16, 50, 1e-3);
  task.training.learning_rate = 1e200;
  try {
    train_relaxometry(task);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.iteration, 1u);
    EXPECT_TRUE(std::isfinite(e.last_finite_loss));
  }
}

TEST(TrainRelaxometry, NoiselessTwoRegionPhantomRecoversT2) {
  const phantom::Phantom ph = two_region_phantom(32);
  RelaxometryTask task;
  task.input = physics::mono_exp_synth(ph.m0, ph.t2, kTenEcho, &ph.mask);
  task.protocol = kTenEcho;
  task.network = relaxometry_network_config(10, 16, 9);
  task.training.iterations = 2000;
  task.training.seed = 1;
  const RelaxometryResult r = train_relaxometry(task);
  std::vector<double> rel;
  for (std::size_t p = 0; p < ph.mask.size(); ++p) {
    if (ph.mask[p]) rel.push_back(std::abs(r.t2.values[p] - ph.t2.values[p]) / ph.t2.values[p]);
  }
  std::nth_element(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(rel.size() / 2), rel.end());
  EXPECT_LT(rel[rel.size() / 2], 0.02);
}

TEST(TrainMrf, RankMismatchRejectedBeforeTraining) {
  const auto dict = physics::generate_dictionary(physics::DictionaryGrid::range(200.0, 2000.0, 300.0, 20.0, 300.0, 40.0),
                                                 physics::default_schedule().truncated(60));
  MrfTask task;
  task.basis = subspace::compress_dictionary(dict, 0.99);
  task.input = ContrastStack::zeros(60, 12, 12, true);
  task.input.real[5] = 1.0;
  task.network = mrf_network_config(task.basis.rank + 1, 60, false, 4, 1);
  task.training.iterations = 3;
  bool progressed = false;
  task.training.progress = [&](std::size_t, double) { progressed = true; };
  EXPECT_THROW(train_mrf(task), ConfigurationError);
  EXPECT_FALSE(progressed);

  task.network = mrf_network_config(task.basis.rank, 60, false, 4, 1);
  task.input = ContrastStack::zeros(59, 12, 12, true);
  task.input.real[5] = 1.0;
  EXPECT_THROW(train_mrf(task), ConfigurationError);
}

TEST(TrainMrf, ShortRunProducesMatchedMaps) {
  const auto dict = physics::generate_dictionary(physics::DictionaryGrid::range(200.0, 2000.0, 300.0, 20.0, 300.0, 40.0),
                                                 physics::default_schedule().truncated(60));
  const auto basis = subspace::compress_dictionary(dict, 0.99);
  const auto compressed = subspace::compress_atoms(dict, basis);
  MrfTask task;
  task.basis = basis;
  task.dictionary = &compressed;
  task.input = ContrastStack::zeros(60, 12, 12, true);
  for (std::size_t p = 0; p < 144; ++p) {
    const auto atom = dict.atom(p % dict.size());
    for (std::size_t t = 0; t < 60; ++t) {
      task.input.real[t * 144 + p] = atom[t].real();
      task.input.imag[t * 144 + p] = atom[t].imag();
    }
  }
  task.network = mrf_network_config(basis.rank, 60, false, 4, 1);
  task.training.iterations = 20;
  const MrfResult r = train_mrf(task);
  EXPECT_EQ(r.coefficients.rank, basis.rank);
  EXPECT_LE(r.best_loss, r.loss_history.back());
  EXPECT_EQ(r.t1.size(), 144u);
  for (std::size_t p = 0; p < 144; ++p) {
    EXPECT_TRUE(std::find(dict.t1_ms.begin(), dict.t1_ms.end(), r.t1.values[p]) != dict.t1_ms.end());
  }
  const MrfResult again = train_mrf(task);
  EXPECT_EQ(again.coefficients.real, r.coefficients.real);
  EXPECT_EQ(again.t2.values, r.t2.values);
}
