#include "qfit/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "qfit/losses.hpp"
#include "qfit/network.hpp"
#include "qfit/ops.hpp"
#include "qfit/signal_models.hpp"
#include "qfit/subspace.hpp"

namespace qfit {

namespace {

using ad::Shape;
using ad::Tensor;

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Values with magnitude in [0.5, 1.5] and random sign, away from poles.
std::vector<double> away_from_zero(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v = uniform(rng, n, 0.5, 1.5);
  std::bernoulli_distribution flip(0.5);
  for (double& x : v) {
    if (flip(rng)) x = -x;
  }
  return v;
}

Tensor param(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = ad::element_count(shape);
  return Tensor::parameter(std::move(shape), uniform(rng, n, lo, hi));
}

// sum(w * out) with a fixed random w, so every output coordinate contributes.
Tensor weighted_sum(const Tensor& out, const std::vector<double>& w) {
  return ad::reduce_sum(ad::mul(out, Tensor::constant(out.shape(), w)));
}

struct Case {
  std::string name;
  // Builds one random draw: the inputs to check and the scalar function.
  std::function<void(std::mt19937_64&, std::vector<Tensor>&, ad::ScalarFunction&)> draw;
  std::size_t max_coordinates = 0;
};

using Unary = Tensor (*)(const Tensor&);

Case unary_case(const std::string& name, std::function<Tensor(const Tensor&)> op, bool avoid_zero = false) {
  return {name, [op, avoid_zero](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
            const Shape shape{2, 3, 4};
            in = {avoid_zero ? Tensor::parameter(shape, away_from_zero(rng, 24)) : param(rng, shape)};
            const std::vector<double> w = uniform(rng, 24, -1.0, 1.0);
            f = [op, w](std::span<const Tensor> x) { return weighted_sum(op(x[0]), w); };
          }};
}

Case binary_case(const std::string& name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                 bool avoid_zero_rhs = false) {
  return {name, [op, avoid_zero_rhs](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
            const Shape shape{3, 5};
            in = {param(rng, shape), avoid_zero_rhs ? Tensor::parameter(shape, away_from_zero(rng, 15)) : param(rng, shape)};
            const std::vector<double> w = uniform(rng, 15, -1.0, 1.0);
            f = [op, w](std::span<const Tensor> x) { return weighted_sum(op(x[0], x[1]), w); };
          }};
}

Case reduction_case(const std::string& name, Unary op) {
  return {name, [op](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
            in = {param(rng, {4, 6})};
            f = [op](std::span<const Tensor> x) { return op(x[0]); };
          }};
}

std::vector<Case> build_cases(std::size_t network_coordinates) {
  std::vector<Case> cases;
  cases.push_back(binary_case("add", ad::add));
  cases.push_back(binary_case("sub", ad::sub));
  cases.push_back(binary_case("mul", ad::mul));
  cases.push_back(binary_case("div", ad::div, true));
  cases.push_back(unary_case("scale", [](const Tensor& x) { return ad::scale(x, -1.7); }));
  cases.push_back(unary_case("add_scalar", [](const Tensor& x) { return ad::add_scalar(x, 0.3); }));
  cases.push_back(unary_case("exp", ad::exp));
  cases.push_back(unary_case("square", ad::square));
  cases.push_back(unary_case("reciprocal", ad::reciprocal, true));
  cases.push_back(unary_case("relu", ad::relu));
  cases.push_back(unary_case("softplus", ad::softplus));
  cases.push_back(unary_case("sigmoid", ad::sigmoid));
  cases.push_back(unary_case("bounded_sigmoid", [](const Tensor& x) { return nn::bounded_sigmoid(x, 1.0, 30.0); }));
  cases.push_back(reduction_case("reduce_sum", ad::reduce_sum));
  cases.push_back(reduction_case("reduce_mean", ad::reduce_mean));
  cases.push_back(reduction_case("reduce_abs_mean", ad::reduce_abs_mean));

  cases.push_back({"matmul", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {3, 4}), param(rng, {4, 5})};
                     const std::vector<double> w = uniform(rng, 15, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) { return weighted_sum(ad::matmul(x[0], x[1]), w); };
                   }});
  cases.push_back({"conv2d", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {2, 2, 5, 4}), param(rng, {3, 2, 3, 3}), param(rng, {3})};
                     const std::vector<double> w = uniform(rng, 2 * 3 * 5 * 4, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) { return weighted_sum(ad::conv2d(x[0], x[1], x[2]), w); };
                   }});
  cases.push_back({"instance_norm", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {2, 3, 4, 4}), param(rng, {3}), param(rng, {3})};
                     const std::vector<double> w = uniform(rng, 2 * 3 * 16, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) {
                       return weighted_sum(ad::instance_norm(x[0], x[1], x[2], 1e-5), w);
                     };
                   }});
  cases.push_back({"slice_channels", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {2, 4, 3, 3})};
                     const std::vector<double> w = uniform(rng, 2 * 2 * 9, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) { return weighted_sum(ad::slice_channels(x[0], 1, 2), w); };
                   }});
  cases.push_back({"concat_channels", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {2, 1, 3, 3}), param(rng, {2, 2, 3, 3})};
                     const std::vector<double> w = uniform(rng, 2 * 3 * 9, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) {
                       const Tensor parts[] = {x[0], x[1]};
                       return weighted_sum(ad::concat_channels(parts), w);
                     };
                   }});
  cases.push_back({"filter_valid", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {1, 2, 6, 5})};
                     const std::vector<double> window = uniform(rng, 9, -1.0, 1.0);
                     const std::vector<double> w = uniform(rng, 2 * 4 * 3, -1.0, 1.0);
                     f = [window, w](std::span<const Tensor> x) {
                       return weighted_sum(ad::filter_valid(x[0], window, 3), w);
                     };
                   }});
  cases.push_back({"channels_to_rows", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {1, 3, 2, 4})};
                     const std::vector<double> w = uniform(rng, 24, -1.0, 1.0);
                     f = [w](std::span<const Tensor> x) { return weighted_sum(ad::channels_to_rows(x[0]), w); };
                   }});
  cases.push_back({"mono_exp_synth", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {1, 1, 3, 3}, 0.5, 1.5), param(rng, {1, 1, 3, 3}, 20.0, 200.0)};
                     const auto proto = physics::EchoProtocol::uniform(6.0, 6.0, 10);
                     const std::vector<double> w = uniform(rng, 10 * 9, -1.0, 1.0);
                     f = [proto, w](std::span<const Tensor> x) {
                       return weighted_sum(physics::mono_exp_synth(x[0], x[1], proto), w);
                     };
                   }});
  cases.push_back({"ssim_loss", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {1, 2, 12, 13}, 0.0, 1.0), param(rng, {1, 2, 12, 13}, 0.0, 1.0)};
                     f = [](std::span<const Tensor> x) { return nn::ssim_loss(x[0], x[1], nn::SsimConfig{}); };
                   }});
  cases.push_back({"l1_loss", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {3, 7}), param(rng, {3, 7})};
                     f = [](std::span<const Tensor> x) { return nn::l1_loss(x[0], x[1]); };
                   }});
  cases.push_back({"synth_timeseries", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     in = {param(rng, {1, 4, 3, 3})};
                     const Tensor phi = Tensor::constant({2, 7}, uniform(rng, 14, -1.0, 1.0));
                     const std::vector<double> wr = uniform(rng, 9 * 7, -1.0, 1.0);
                     const std::vector<double> wi = uniform(rng, 9 * 7, -1.0, 1.0);
                     f = [phi, wr, wi](std::span<const Tensor> x) {
                       const auto ts = subspace::synth_timeseries(x[0], phi);
                       return ad::add(weighted_sum(ts.real, wr), weighted_sum(ts.imag, wi));
                     };
                   }});
  cases.push_back({"network", [](std::mt19937_64& rng, std::vector<Tensor>& in, ad::ScalarFunction& f) {
                     nn::NetworkConfig cfg;
                     cfg.in_channels = 2;
                     cfg.base_width = 4;
                     cfg.n_residual_blocks = 9;
                     cfg.out_channels = 2;
                     cfg.out_activation = {nn::OutputActivation::positive(), nn::OutputActivation::bounded(1.0, 300.0)};
                     auto net = std::make_shared<nn::MappingNetwork>(cfg, rng());
                     const Tensor x = param(rng, {1, 2, 6, 6});
                     in = net->parameters();
                     in.push_back(x);
                     const std::vector<double> w = uniform(rng, 2 * 36, -1.0, 1.0);
                     f = [net, x, w](std::span<const Tensor>) { return weighted_sum(net->forward(x), w); };
                   },
                   network_coordinates});
  return cases;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckCase> out;
  std::mt19937_64 rng(options.seed);
  for (const Case& c : build_cases(options.network_coordinates)) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckCase row;
    row.name = c.name;
    for (std::size_t p = 0; p < options.points; ++p) {
      std::vector<Tensor> inputs;
      ad::ScalarFunction f;
      c.draw(rng, inputs, f);
      ad::GradCheckOptions check = options.check;
      check.max_coordinates = c.max_coordinates;
      check.seed = rng();
      const ad::GradCheckResult r = ad::check_gradients(f, inputs, check);
      ++row.points;
      row.coordinates += r.coordinates_checked;
      row.max_relative_error = std::max(row.max_relative_error, r.max_relative_error);
      row.passed = row.passed && r.passed;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(row);
  }
  return out;
}

std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %6s %8s %14s %9s  %s\n", "op", "points", "coords", "max_rel_err", "seconds",
                "status");
  os << line;
  for (const GradCheckCase& c : cases) {
    std::snprintf(line, sizeof line, "%-18s %6zu %8zu %14.3e %9.3f  %s\n", c.name.c_str(), c.points, c.coordinates,
                  c.max_relative_error, c.seconds, c.passed ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace qfit
