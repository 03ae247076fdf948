#include "qfit/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "qfit/ops.hpp"

namespace qfit::nn {

void SsimConfig::validate() const {
  if (window_size == 0 || window_size % 2 == 0) throw std::invalid_argument("ssim: window size must be odd");
  if (!(sigma > 0.0)) throw std::invalid_argument("ssim: sigma must be positive");
  if (!(dynamic_range > 0.0)) throw std::invalid_argument("ssim: dynamic range must be positive");
  if (!(c1() > 0.0) || !(c2() > 0.0)) throw std::invalid_argument("ssim: C1 and C2 must be positive");
}

SsimConfig SsimConfig::for_range(double dynamic_range) {
  SsimConfig cfg;
  cfg.dynamic_range = dynamic_range;
  return cfg;
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double center = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  std::vector<double> window(size * size);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) window[i * size + j] = g[i] * g[j];
  }
  return window;
}

Tensor ssim_loss(const Tensor& a, const Tensor& b, const SsimConfig& config) {
  using namespace ad;
  config.validate();
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim_loss: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t k = config.window_size;
  const std::vector<double> window = gaussian_window(k, config.sigma);
  auto blur = [&](const Tensor& t) { return filter_valid(t, window, k); };

  const Tensor mu_a = blur(a);
  const Tensor mu_b = blur(b);
  const Tensor mu_a2 = square(mu_a);
  const Tensor mu_b2 = square(mu_b);
  const Tensor mu_ab = mul(mu_a, mu_b);
  const Tensor var_a = sub(blur(square(a)), mu_a2);
  const Tensor var_b = sub(blur(square(b)), mu_b2);
  const Tensor cov = sub(blur(mul(a, b)), mu_ab);

  const Tensor numerator = mul(add_scalar(scale(mu_ab, 2.0), config.c1()), add_scalar(scale(cov, 2.0), config.c2()));
  const Tensor denominator =
      mul(add_scalar(add(mu_a2, mu_b2), config.c1()), add_scalar(add(var_a, var_b), config.c2()));
  return add_scalar(scale(reduce_mean(div(numerator, denominator)), -1.0), 1.0);
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ad::ShapeError("l1_loss: shape mismatch " + ad::shape_string(a.shape()) + " vs " +
                         ad::shape_string(b.shape()));
  }
  return ad::reduce_abs_mean(ad::sub(a, b));
}

}  // namespace qfit::nn
