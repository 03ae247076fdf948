#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "qfit/gradcheck.hpp"
#include "qfit/ops.hpp"

using namespace qfit::ad;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Zero-padded same-size cross-correlation by nested loops.
std::vector<double> direct_conv(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                                std::size_t n, std::size_t cin, std::size_t cout, std::size_t h, std::size_t wd,
                                std::size_t k) {
  std::vector<double> out(n * cout * h * wd, 0.0);
  const long r = static_cast<long>(k / 2);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t co = 0; co < cout; ++co)
      for (long y = 0; y < static_cast<long>(h); ++y)
        for (long xx = 0; xx < static_cast<long>(wd); ++xx) {
          double s = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (long dy = -r; dy <= r; ++dy)
              for (long dx = -r; dx <= r; ++dx) {
                const long yy = y + dy, xs = xx + dx;
                if (yy < 0 || xs < 0 || yy >= static_cast<long>(h) || xs >= static_cast<long>(wd)) continue;
                s += w[((co * cin + ci) * k + static_cast<std::size_t>(dy + r)) * k + static_cast<std::size_t>(dx + r)] *
                     x[((in * cin + ci) * h + static_cast<std::size_t>(yy)) * wd + static_cast<std::size_t>(xs)];
              }
          out[((in * cout + co) * h + static_cast<std::size_t>(y)) * wd + static_cast<std::size_t>(xx)] = s;
        }
  return out;
}

}  // namespace

TEST(Tensor, ElementCountMatchesShape) {
  const Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor::constant({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, NonFiniteValuesAreRejected) {
  const Tensor x = Tensor::constant({2}, {1000.0, 1.0});
  EXPECT_THROW(qfit::ad::exp(x), NonFiniteError);
  const Tensor z = Tensor::constant({1}, {0.0});
  EXPECT_THROW(reciprocal(z), NonFiniteError);
  EXPECT_THROW(Tensor::constant({1}, {std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
}

TEST(Tensor, OnlyLeavesAreWritable) {
  Tensor p = Tensor::parameter({2}, {1.0, 2.0});
  p.mutable_values()[0] = 5.0;
  EXPECT_EQ(p.values()[0], 5.0);
  Tensor q = add(p, p);
  EXPECT_THROW(q.mutable_values(), std::logic_error);
}

TEST(Ops, ElementwiseValues) {
  const Tensor a = Tensor::constant({3}, {-1.0, 0.0, 2.0});
  const Tensor b = Tensor::constant({3}, {4.0, 5.0, 0.5});
  const Tensor ra = relu(a);
  const auto r = ra.values();
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[2], 2.0);
  EXPECT_DOUBLE_EQ(add(a, b).values()[0], 3.0);
  EXPECT_DOUBLE_EQ(mul(a, b).values()[2], 1.0);
  EXPECT_DOUBLE_EQ(div(a, b).values()[2], 4.0);
  EXPECT_NEAR(softplus(a).values()[1], std::log(2.0), 1e-15);
  EXPECT_NEAR(sigmoid(a).values()[1], 0.5, 1e-15);
  EXPECT_NEAR(softplus(Tensor::constant({1}, {800.0})).values()[0], 800.0, 1e-12);
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
}

TEST(Ops, MatmulIdentity) {
  const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor b = Tensor::constant({3, 2}, random_values(6, 3));
  const Tensor c = matmul(eye, b);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c.values()[i], b.values()[i]);
  EXPECT_THROW(matmul(eye, Tensor::zeros({2, 2})), ShapeError);
}

TEST(Backward, MeanGradientIsUniform) {
  const Tensor x = Tensor::parameter({4}, {1.0, -2.0, 3.0, 0.5});
  const Tensor params[] = {x};
  const Gradients g = backward(reduce_mean(x), params);
  for (double v : g[0]) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Backward, SumOfSquares) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor params[] = {x};
  const Gradients g = backward(reduce_sum(mul(x, x)), params);
  EXPECT_DOUBLE_EQ(g[0][0], 2.0);
  EXPECT_DOUBLE_EQ(g[0][1], 4.0);
}

TEST(Backward, RequiresScalarLoss) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor params[] = {x};
  EXPECT_THROW(backward(square(x), params), ShapeError);
}

TEST(Backward, UnreachableParameterGetsZero) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor y = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  const Tensor params[] = {x, y};
  const Gradients g = backward(reduce_sum(x), params);
  ASSERT_EQ(g[1].size(), 3u);
  for (double v : g[1]) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedSubgraphVisitedOnce) {
  // y = x * x used twice: d/dx sum(y + y) = 4x.
  const Tensor x = Tensor::parameter({2}, {1.5, -3.0});
  const Tensor y = mul(x, x);
  const Tensor params[] = {x};
  const Gradients g = backward(reduce_sum(add(y, y)), params);
  EXPECT_DOUBLE_EQ(g[0][0], 6.0);
  EXPECT_DOUBLE_EQ(g[0][1], -12.0);
}

TEST(Backward, IsLinearInTheLoss) {
  const Tensor x = Tensor::parameter({1, 2, 5, 5}, random_values(50, 11));
  const Tensor w = Tensor::parameter({2, 2, 3, 3}, random_values(36, 12));
  const Tensor b = Tensor::parameter({2}, random_values(2, 13));
  const Tensor params[] = {x, w, b};
  auto l1 = [&] { return reduce_mean(relu(conv2d(x, w, b))); };
  auto l2 = [&] { return reduce_abs_mean(conv2d(x, w, b)); };
  const double a = 0.7, c = -1.3;
  const Gradients g1 = backward(l1(), params);
  const Gradients g2 = backward(l2(), params);
  const Gradients g = backward(add(scale(l1(), a), scale(l2(), c)), params);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g[i].size(); ++j) EXPECT_NEAR(g[i][j], a * g1[i][j] + c * g2[i][j], 1e-12);
  }
}

TEST(Backward, RepeatedRunsAreBitIdentical) {
  const Tensor x = Tensor::parameter({1, 3, 6, 6}, random_values(108, 21));
  const Tensor w = Tensor::parameter({4, 3, 3, 3}, random_values(108, 22));
  const Tensor b = Tensor::parameter({4}, random_values(4, 23));
  const Tensor gamma = Tensor::parameter({4}, random_values(4, 24));
  const Tensor beta = Tensor::parameter({4}, random_values(4, 25));
  const Tensor params[] = {x, w, b, gamma, beta};
  auto run = [&] { return backward(reduce_mean(relu(instance_norm(conv2d(x, w, b), gamma, beta))), params); };
  EXPECT_EQ(run(), run());
}

TEST(Conv2d, IdentityKernel) {
  const Tensor x = Tensor::constant({2, 1, 4, 5}, random_values(40, 31));
  const Tensor w = Tensor::constant({1, 1, 1, 1}, {1.0});
  const Tensor b = Tensor::constant({1}, {0.0});
  const Tensor y = conv2d(x, w, b);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, AllOnesKernelOnTwoByTwo) {
  const Tensor x = Tensor::constant({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor w = Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  const Tensor y = conv2d(x, w, Tensor::constant({1}, {0.0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 10.0);
}

TEST(Conv2d, MatchesDirectSummation) {
  for (std::size_t k : {1u, 3u, 5u}) {
    const std::size_t n = 2, cin = 3, cout = 4, h = 7, wd = 6;
    const auto xv = random_values(n * cin * h * wd, 41 + k);
    const auto wv = random_values(cout * cin * k * k, 42 + k);
    const auto bv = random_values(cout, 43 + k);
    const Tensor y = conv2d(Tensor::constant({n, cin, h, wd}, xv), Tensor::constant({cout, cin, k, k}, wv),
                            Tensor::constant({cout}, bv));
    const auto expected = direct_conv(xv, wv, bv, n, cin, cout, h, wd, k);
    ASSERT_EQ(y.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.values()[i], expected[i], 1e-12) << "k=" << k;
  }
}

TEST(Conv2d, RejectsBadShapes) {
  const Tensor x = Tensor::zeros({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1})), ShapeError);
}

TEST(Conv2d, WeightGradientMatchesFiniteDifferences) {
  std::vector<Tensor> in = {Tensor::parameter({1, 2, 5, 5}, random_values(50, 51)),
                            Tensor::parameter({3, 2, 3, 3}, random_values(54, 52)),
                            Tensor::parameter({3}, random_values(3, 53))};
  const auto r = check_gradients([](std::span<const Tensor> x) { return reduce_sum(conv2d(x[0], x[1], x[2])); }, in);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(InstanceNorm, StandardizesEachPlane) {
  const std::size_t c = 3, hw = 30;
  const Tensor x = Tensor::constant({2, c, 5, 6}, random_values(2 * c * hw, 61, -3.0, 5.0));
  const Tensor y = instance_norm(x, Tensor::constant({c}, {1, 1, 1}), Tensor::constant({c}, {0, 0, 0}), 1e-10);
  for (std::size_t p = 0; p < 2 * c; ++p) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mean += y.values()[p * hw + i];
    mean /= hw;
    for (std::size_t i = 0; i < hw; ++i) var += std::pow(y.values()[p * hw + i] - mean, 2);
    var /= hw;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(InstanceNorm, ConstantPlaneGivesBeta) {
  const Tensor x = Tensor::constant({1, 2, 3, 3}, std::vector<double>(18, 4.2));
  const Tensor y = instance_norm(x, Tensor::constant({2}, {2.0, -1.0}), Tensor::constant({2}, {0.3, -0.7}), 1e-5);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(y.values()[i], 0.3, 1e-12);
  for (std::size_t i = 9; i < 18; ++i) EXPECT_NEAR(y.values()[i], -0.7, 1e-12);
}

TEST(InstanceNorm, NeedsTwoPixels) {
  EXPECT_THROW(instance_norm(Tensor::zeros({1, 1, 1, 1}), Tensor::zeros({1}), Tensor::zeros({1}), 1e-5), ShapeError);
}

TEST(Composite, ConvNormReluMeanMatchesFiniteDifferences) {
  std::vector<Tensor> in = {Tensor::parameter({1, 2, 5, 4}, random_values(40, 71)),
                            Tensor::parameter({3, 2, 3, 3}, random_values(54, 72)),
                            Tensor::parameter({3}, random_values(3, 73)),
                            Tensor::parameter({3}, random_values(3, 74)),
                            Tensor::parameter({3}, random_values(3, 75))};
  const auto r = check_gradients(
      [](std::span<const Tensor> x) { return reduce_mean(relu(instance_norm(conv2d(x[0], x[1], x[2]), x[3], x[4]))); },
      in);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_EQ(relative_error(1e-10, 5e-9, 1e-8), 0.0);
  EXPECT_NEAR(relative_error(1.0, 1.1, 1e-8), 0.1 / 1.1, 1e-15);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A function whose recorded backward is deliberately wrong.
  std::vector<Tensor> in = {Tensor::parameter({3}, {0.1, 0.2, 0.3})};
  const auto r = check_gradients(
      [](std::span<const Tensor> x) {
        const Tensor& p = x[0];
        std::vector<double> v(p.values().begin(), p.values().end());
        for (double& e : v) e = e * e;
        const Tensor sq = Tensor::from_op("bad_square", p.shape(), v, {p}, [](qfit::ad::detail::Node& self) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
        });
        return reduce_sum(sq);
      },
      in);
  EXPECT_FALSE(r.passed);
}
