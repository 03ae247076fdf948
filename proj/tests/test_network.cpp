#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "qfit/adam.hpp"
#include "qfit/losses.hpp"
#include "qfit/network.hpp"
#include "qfit/ops.hpp"

using namespace qfit;
using ad::Tensor;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

nn::NetworkConfig small_config(std::size_t blocks = 2) {
  nn::NetworkConfig cfg;
  cfg.in_channels = 3;
  cfg.base_width = 4;
  cfg.n_residual_blocks = blocks;
  cfg.out_channels = 2;
  return cfg;
}

// Plain-loop SSIM: Gaussian 11x11 window, valid positions, mean over channels.
double direct_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t c, std::size_t h,
                   std::size_t w, double L) {
  const std::size_t k = 11;
  const double sigma = 1.5;
  std::vector<double> g(k);
  double gs = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    g[i] = std::exp(-std::pow(static_cast<double>(i) - 5.0, 2) / (2 * sigma * sigma));
    gs += g[i];
  }
  const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y + k <= h; ++y) {
      for (std::size_t x = 0; x + k <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double wt = g[i] * g[j] / (gs * gs);
            const double va = a[(ch * h + y + i) * w + x + j], vb = b[(ch * h + y + i) * w + x + j];
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// Independent scalar Adam.
std::vector<double> scalar_adam_trace(double x, double lr, int steps) {
  double m = 0, v = 0;
  std::vector<double> trace;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    trace.push_back(x);
  }
  return trace;
}

}  // namespace

TEST(Network, ParameterCountMatchesClosedForm) {
  nn::NetworkConfig cfg;
  cfg.in_channels = 10;
  cfg.base_width = 64;
  cfg.n_residual_blocks = 9;
  cfg.out_channels = 2;
  const std::size_t w = 64, k = 3;
  const std::size_t head = w * 10 * k * k + w + 2 * w;
  const std::size_t block = 2 * (w * w * k * k + w) + 2 * (2 * w);
  const std::size_t tail = 2 * w + 2;
  EXPECT_EQ(nn::MappingNetwork(cfg, 1).parameter_count(), head + 9 * block + tail);
}

TEST(Network, SameSeedSameInitialization) {
  const nn::MappingNetwork a(small_config(), 42), b(small_config(), 42), c(small_config(), 43);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_difference = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto va = a.parameters()[i].values(), vb = b.parameters()[i].values(), vc = c.parameters()[i].values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    any_difference = any_difference || !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(any_difference);
}

TEST(Network, InitializationWithinFanInBound) {
  nn::MappingNetwork net(small_config(), 5);
  const auto& p = net.parameters();
  const double bound = std::sqrt(1.0 / (3 * 9));
  for (double v : p[0].values()) EXPECT_LE(std::abs(v), bound);
  for (double v : p[2].values()) EXPECT_EQ(v, 1.0);  // gamma
  for (double v : p[3].values()) EXPECT_EQ(v, 0.0);  // beta
}

TEST(Network, ZeroInputGivesFiniteOutputOfRightShape) {
  nn::NetworkConfig cfg = small_config();
  cfg.out_activation = {nn::OutputActivation::positive(), nn::OutputActivation::bounded(1.0, 3000.0)};
  const nn::MappingNetwork net(cfg, 3);
  const Tensor y = net.forward(Tensor::zeros({2, 3, 6, 7}));
  EXPECT_EQ(y.shape(), (ad::Shape{2, 2, 6, 7}));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_TRUE(std::isfinite(y.values()[i]));
  EXPECT_THROW(net.forward(Tensor::zeros({1, 4, 6, 6})), ad::ShapeError);
}

TEST(Network, RejectsInvalidConfig) {
  nn::NetworkConfig cfg = small_config();
  cfg.n_residual_blocks = 0;
  EXPECT_THROW(nn::MappingNetwork(cfg, 1), std::invalid_argument);
  cfg = small_config();
  cfg.out_channels = 0;
  EXPECT_THROW(nn::MappingNetwork(cfg, 1), std::invalid_argument);
  cfg = small_config();
  cfg.out_activation = {nn::OutputActivation::linear()};
  EXPECT_THROW(nn::MappingNetwork(cfg, 1), std::invalid_argument);
}

TEST(Network, ShiftEquivariantAwayFromBorders) {
  // Instance norm sees the whole plane, so compare two placements of the same
  // content inside zero margins wide enough that no output sees both the
  // content and the canvas border.
  for (std::size_t blocks : {2u, 9u}) {
    nn::NetworkConfig cfg = small_config(blocks);
    const nn::MappingNetwork net(cfg, 9);
    const std::size_t radius = 1 + 2 * blocks, content = 6, shift = 3;
    const std::size_t margin = 2 * radius + shift + 1;
    const std::size_t size = content + 2 * margin + shift;
    const auto patch = random_values(3 * content * content, 17);
    auto place = [&](std::size_t offset) {
      std::vector<double> v(3 * size * size, 0.0);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < content; ++y)
          for (std::size_t x = 0; x < content; ++x)
            v[(c * size + y + offset) * size + x + offset] = patch[(c * content + y) * content + x];
      return net.forward(Tensor::constant({1, 3, size, size}, v));
    };
    const Tensor a = place(margin), b = place(margin + shift);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = margin - radius + shift; y < margin + content + radius - shift; ++y)
        for (std::size_t x = margin - radius + shift; x < margin + content + radius - shift; ++x)
          EXPECT_NEAR(a.values()[(c * size + y) * size + x], b.values()[(c * size + y + shift) * size + x + shift], 1e-9);
  }
}

TEST(BoundedSigmoid, MidpointLimitsAndErrors) {
  const Tensor y = nn::bounded_sigmoid(Tensor::constant({3}, {0.0, 40.0, -40.0}), 1.0, 3000.0);
  EXPECT_DOUBLE_EQ(y.values()[0], 1500.5);
  EXPECT_NEAR(y.values()[1], 3000.0, 1e-9);
  EXPECT_LT(y.values()[1], 3000.0 + 1e-12);
  EXPECT_NEAR(y.values()[2], 1.0, 1e-9);
  EXPECT_THROW(nn::bounded_sigmoid(Tensor::constant({1}, {0.0}), 5.0, 5.0), std::invalid_argument);
}

TEST(Ssim, IdenticalImagesGiveZero) {
  const Tensor a = Tensor::constant({1, 2, 16, 16}, random_values(512, 1, 0.0, 1.0));
  EXPECT_NEAR(nn::ssim_loss(a, a, {}).item(), 0.0, 1e-9);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double p = 0.3, q = 0.7;
  const nn::SsimConfig cfg;
  const Tensor a = Tensor::constant({1, 1, 12, 12}, std::vector<double>(144, p));
  const Tensor b = Tensor::constant({1, 1, 12, 12}, std::vector<double>(144, q));
  const double expected = 1.0 - (2 * p * q + cfg.c1()) / (p * p + q * q + cfg.c1());
  EXPECT_NEAR(nn::ssim_loss(a, b, cfg).item(), expected, 1e-12);
}

TEST(Ssim, MatchesDirectFormula) {
  const auto av = random_values(2 * 32 * 32, 2, 0.0, 1.0), bv = random_values(2 * 32 * 32, 3, 0.0, 1.0);
  const double L = 1.3;
  const double loss = nn::ssim_loss(Tensor::constant({1, 2, 32, 32}, av), Tensor::constant({1, 2, 32, 32}, bv),
                                    nn::SsimConfig::for_range(L))
                          .item();
  EXPECT_NEAR(loss, 1.0 - direct_ssim(av, bv, 2, 32, 32, L), 1e-8);
}

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor a = Tensor::constant({1, 3, 14, 13}, random_values(3 * 14 * 13, 10 + s, -1.0, 1.0));
    const Tensor b = Tensor::constant({1, 3, 14, 13}, random_values(3 * 14 * 13, 20 + s, -1.0, 1.0));
    const double ab = nn::ssim_loss(a, b, {}).item(), ba = nn::ssim_loss(b, a, {}).item();
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 2.0);
  }
}

TEST(Ssim, RejectsMismatchedShapes) {
  EXPECT_THROW(nn::ssim_loss(Tensor::zeros({1, 1, 12, 12}), Tensor::zeros({1, 1, 12, 13}), {}), ad::ShapeError);
}

TEST(Ssim, WindowIsNormalized) {
  const auto w = nn::gaussian_window(11, 1.5);
  double s = 0.0;
  for (double v : w) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(L1, Values) {
  EXPECT_DOUBLE_EQ(nn::l1_loss(Tensor::constant({2}, {0, 0}), Tensor::constant({2}, {1, -3})).item(), 2.0);
  const Tensor a = Tensor::constant({4}, {1, 2, 3, 4});
  EXPECT_EQ(nn::l1_loss(a, a).item(), 0.0);
  EXPECT_THROW(nn::l1_loss(a, Tensor::zeros({3})), ad::ShapeError);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  std::vector<Tensor> p = {Tensor::parameter({3}, {1.0, -2.0, 0.5})};
  auto state = nn::AdamState::for_parameters(p);
  const ad::Gradients g = {{0.3, -7.0, 1e-3}};
  nn::adam_step(p, g, state, {0.01, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0].values()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[0].values()[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p[0].values()[2], 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> p = {Tensor::parameter({2}, {1.0, -2.0})};
  auto state = nn::AdamState::for_parameters(p);
  for (int i = 0; i < 10; ++i) nn::adam_step(p, {{0.0, 0.0}}, state, {});
  EXPECT_EQ(p[0].values()[0], 1.0);
  EXPECT_EQ(p[0].values()[1], -2.0);
}

TEST(Adam, QuadraticMatchesScalarReference) {
  std::vector<Tensor> p = {Tensor::parameter({1}, {1.0})};
  auto state = nn::AdamState::for_parameters(p);
  const auto reference = scalar_adam_trace(1.0, 0.1, 100);
  for (int t = 0; t < 100; ++t) {
    const Tensor params[] = {p[0]};
    const ad::Gradients g = ad::backward(ad::reduce_sum(ad::square(p[0])), params);
    nn::adam_step(p, g, state, {0.1, 0.9, 0.999, 1e-8});
    EXPECT_NEAR(p[0].values()[0], reference[static_cast<std::size_t>(t)], 1e-12);
  }
  EXPECT_LT(std::abs(p[0].values()[0]), 0.1);
}

TEST(Adam, RejectsMismatchedState) {
  std::vector<Tensor> p = {Tensor::parameter({2}, {1.0, -2.0})};
  auto state = nn::AdamState::for_parameters(p);
  EXPECT_THROW(nn::adam_step(p, {{1.0}}, state, {}), ad::ShapeError);
  EXPECT_THROW(nn::adam_step(p, {}, state, {}), ad::ShapeError);
}

TEST(Training, FirstIterationsDescendOnNoiselessInput) {
  // Fit a small network to reproduce a fixed 16x16 image under L1.
  nn::NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.base_width = 4;
  cfg.n_residual_blocks = 2;
  cfg.out_channels = 1;
  nn::MappingNetwork net(cfg, 2);
  std::vector<double> img(256);
  for (std::size_t i = 0; i < 256; ++i) img[i] = std::sin(0.3 * static_cast<double>(i % 16)) * std::cos(0.2 * static_cast<double>(i / 16));
  const Tensor x = Tensor::constant({1, 1, 16, 16}, img);
  auto state = nn::AdamState::for_parameters(net.parameters());
  double first = 0.0;
  bool decreased = false;
  for (int it = 0; it < 50 && !decreased; ++it) {
    const Tensor loss = nn::l1_loss(net.forward(x), x);
    if (it == 0) first = loss.item();
    decreased = it > 0 && loss.item() < first;
    nn::adam_step(net.parameters(), ad::backward(loss, net.parameters()), state, {});
  }
  EXPECT_TRUE(decreased);
}

TEST(Network, GradientsIndependentOfHeapLayout) {
  // Vectorized kernels must not change summation order with buffer alignment.
  nn::NetworkConfig cfg = small_config(3);
  cfg.base_width = 8;
  const nn::MappingNetwork net(cfg, 4);
  const Tensor x = Tensor::constant({1, 3, 13, 11}, random_values(3 * 13 * 11, 6));
  auto run = [&] {
    const Tensor loss = ad::reduce_mean(ad::square(net.forward(x)));
    return ad::backward(loss, net.parameters());
  };
  const ad::Gradients reference = run();
  for (std::size_t shift = 1; shift < 9; ++shift) {
    std::vector<std::unique_ptr<char[]>> padding;
    for (std::size_t i = 0; i < 40; ++i) padding.emplace_back(new char[8 * shift + 24 * i]);
    EXPECT_EQ(run(), reference) << shift;
  }
}
