#include "qfit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace qfit::ad {

double relative_error(double analytic, double numeric, double absolute_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= absolute_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

GradCheckResult check_gradients(const ScalarFunction& f, std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  for (const Tensor& t : inputs) {
    if (!t.requires_grad() || !t.is_leaf()) {
      throw std::invalid_argument("check_gradients: inputs must be parameter leaves");
    }
  }
  const Tensor loss = f(inputs);
  const Gradients analytic = backward(loss, inputs);
  const double floor = options.absolute_floor * std::max(1.0, std::abs(loss.item()));

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  }
  if (options.max_coordinates != 0 && coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (const auto& [i, j] : coords) {
    auto values = inputs[i].mutable_values();
    const double original = values[j];
    values[j] = original + options.step;
    const double plus = f(inputs).item();
    values[j] = original - options.step;
    const double minus = f(inputs).item();
    values[j] = original;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double err = relative_error(analytic[i][j], numeric, floor);
    ++result.coordinates_checked;
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_input = i;
      result.worst_index = j;
      result.worst_analytic = analytic[i][j];
      result.worst_numeric = numeric;
    }
  }
  result.passed = result.max_relative_error < options.relative_tolerance;
  return result;
}

}  // namespace qfit::ad
