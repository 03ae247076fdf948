#include "qfit/phantom.hpp"

#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace qfit::phantom {

void PhantomSpec::validate() const {
  if (height < 2 || width < 2) throw std::invalid_argument("phantom grid must be at least 2x2");
  if (!(variation >= 0.0 && variation < 1.0)) throw std::invalid_argument("phantom variation must lie in [0, 1)");
  for (const Region& r : regions) {
    if (std::abs(r.center_x) > 1.0 || std::abs(r.center_y) > 1.0) {
      throw std::invalid_argument("phantom region '" + r.label + "' is centred outside the grid");
    }
    if (!(r.radius_x > 0.0) || !(r.radius_y > 0.0)) {
      throw std::invalid_argument("phantom region '" + r.label + "' has a non-positive radius");
    }
    const auto& t = r.tissue;
    if (!(t.t1_ms > 0.0) || !(t.t2_ms > 0.0) || t.m0 < 0.0) {
      throw std::invalid_argument("phantom region '" + r.label + "' has invalid tissue parameters");
    }
    if (t.t2_ms > t.t1_ms) throw std::invalid_argument("phantom region '" + r.label + "' has T2 > T1");
  }
}

PhantomSpec PhantomSpec::brain(std::size_t height, std::size_t width, std::uint64_t seed, double variation) {
  PhantomSpec spec;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  spec.variation = variation;
  spec.regions = {
      {"gm", 0.0, 0.0, 0.80, 0.92, 0.0, {1300.0, 90.0, 0.80, 0.0}},
      {"wm", 0.0, 0.02, 0.60, 0.72, 0.0, {800.0, 70.0, 0.65, 0.0}},
      {"csf", -0.17, -0.08, 0.10, 0.30, 0.30, {2500.0, 300.0, 1.00, 0.0}},
      {"csf", 0.17, -0.08, 0.10, 0.30, -0.30, {2500.0, 300.0, 1.00, 0.0}},
      {"lesion", 0.34, 0.38, 0.12, 0.12, 0.0, {1500.0, 150.0, 0.85, 0.0}},
  };
  return spec;
}

namespace {

// Sum of low-frequency plane waves scaled into [-1, 1].
std::vector<double> smooth_field(std::size_t height, std::size_t width, std::mt19937_64& rng) {
  constexpr int kWaves = 4;
  std::uniform_real_distribution<double> freq(0.15, 0.9);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_int_distribution<int> sign(0, 1);
  double fx[kWaves], fy[kWaves], ph[kWaves], a[kWaves];
  double total = 0.0;
  for (int j = 0; j < kWaves; ++j) {
    fx[j] = freq(rng) * (sign(rng) ? 1.0 : -1.0);
    fy[j] = freq(rng) * (sign(rng) ? 1.0 : -1.0);
    ph[j] = phase(rng);
    a[j] = amp(rng);
    total += a[j];
  }
  std::vector<double> field(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(width);
      const double v = static_cast<double>(y) / static_cast<double>(height);
      double f = 0.0;
      for (int j = 0; j < kWaves; ++j) f += a[j] * std::sin(2.0 * std::numbers::pi * (fx[j] * u + fy[j] * v) + ph[j]);
      field[y * width + x] = f / total;
    }
  }
  return field;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, n = h * w;
  Phantom ph;
  ph.m0 = ParameterMap::filled(h, w, 0.0, "M0", "a.u.");
  ph.t1 = ParameterMap::filled(h, w, 0.0, "T1", "ms");
  ph.t2 = ParameterMap::filled(h, w, 0.0, "T2", "ms");
  ph.mask.assign(n, 0);
  ph.region.assign(n, -1);

  for (std::size_t r = 0; r < spec.regions.size(); ++r) {
    const Region& reg = spec.regions[r];
    const double c = std::cos(reg.angle_rad), s = std::sin(reg.angle_rad);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double px = (2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(w)) - 1.0 - reg.center_x;
        const double py = (2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(h)) - 1.0 - reg.center_y;
        const double u = (c * px + s * py) / reg.radius_x;
        const double v = (-s * px + c * py) / reg.radius_y;
        if (u * u + v * v <= 1.0) ph.region[y * w + x] = static_cast<int>(r);
      }
    }
  }

  std::mt19937_64 rng(spec.seed);
  const std::vector<double> f_m0 = smooth_field(h, w, rng);
  const std::vector<double> f_t1 = smooth_field(h, w, rng);
  const std::vector<double> f_t2 = smooth_field(h, w, rng);
  for (std::size_t p = 0; p < n; ++p) {
    if (ph.region[p] < 0) continue;
    const auto& t = spec.regions[static_cast<std::size_t>(ph.region[p])].tissue;
    ph.m0.values[p] = t.m0 * (1.0 + spec.variation * f_m0[p]);
    ph.t1.values[p] = t.t1_ms * (1.0 + spec.variation * f_t1[p]);
    ph.t2.values[p] = std::min(t.t2_ms * (1.0 + spec.variation * f_t2[p]), ph.t1.values[p]);
    ph.mask[p] = ph.m0.values[p] > 0.0 ? 1 : 0;
  }
  for (ParameterMap* m : {&ph.m0, &ph.t1, &ph.t2}) m->valid = ph.mask;
  return ph;
}

ContrastStack add_gaussian_noise(const ContrastStack& stack, double variance, std::uint64_t seed) {
  if (!(variance >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  ContrastStack out = stack;
  if (variance == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (double& v : out.real) v += noise(rng);
  for (double& v : out.imag) v += noise(rng);
  return out;
}

std::vector<std::vector<std::uint8_t>> undersampling_pattern(std::size_t lines, std::size_t frames,
                                                             std::size_t acceleration, std::uint64_t seed,
                                                             std::size_t center_lines) {
  if (acceleration < 1) throw std::invalid_argument("acceleration must be at least 1");
  if (acceleration > lines) {
    throw std::invalid_argument("acceleration " + std::to_string(acceleration) + " exceeds " +
                                std::to_string(lines) + " phase-encode lines");
  }
  const std::size_t center = std::min(center_lines, lines);
  const std::size_t keep = std::max(center, lines / acceleration);

  // Centre lines in FFT order: k in [-center/2, center - center/2).
  std::vector<std::uint8_t> base(lines, 0);
  const auto half = static_cast<std::ptrdiff_t>(center / 2);
  for (std::ptrdiff_t k = -half; k < static_cast<std::ptrdiff_t>(center) - half; ++k) {
    base[static_cast<std::size_t>((k + static_cast<std::ptrdiff_t>(lines)) % static_cast<std::ptrdiff_t>(lines))] = 1;
  }
  std::vector<std::size_t> outer;
  for (std::size_t i = 0; i < lines; ++i) {
    if (!base[i]) outer.push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::uint8_t>> masks(frames, base);
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<std::size_t> pool = outer;
    for (std::size_t j = 0; j < keep - center; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
      std::swap(pool[j], pool[pick(rng)]);
      masks[f][pool[j]] = 1;
    }
  }
  return masks;
}

ContrastStack undersample_frames(const ContrastStack& stack, std::size_t acceleration, std::uint64_t seed,
                                 std::size_t center_lines) {
  stack.validate();
  const std::size_t h = stack.height, w = stack.width;
  const auto masks = undersampling_pattern(h, stack.frames, acceleration, seed, center_lines);

  ContrastStack out = ContrastStack::zeros(stack.frames, h, w, true);
  out.timing_ms = stack.timing_ms;
  // Masking whole phase-encode lines commutes with the readout transform, so
  // only the transform along y is needed.
  Eigen::FFT<double> fft;
  std::vector<Complex> column(h), spectrum(h);
  for (std::size_t f = 0; f < stack.frames; ++f) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t y = 0; y < h; ++y) column[y] = stack.at(f, y * w + x);
      fft.fwd(spectrum, column);
      for (std::size_t k = 0; k < h; ++k) {
        if (!masks[f][k]) spectrum[k] = 0.0;
      }
      fft.inv(column, spectrum);
      for (std::size_t y = 0; y < h; ++y) {
        out.real[out.index(f, y, x)] = column[y].real();
        out.imag[out.index(f, y, x)] = column[y].imag();
      }
    }
  }
  return out;
}

double rmse(const ParameterMap& estimate, const ParameterMap& truth, const Mask& mask) {
  if (!estimate.same_grid(truth) || mask.size() != truth.size()) {
    throw std::invalid_argument("rmse: estimate, truth and mask differ in size");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const double d = estimate.values[p] - truth.values[p];
    sum += d * d;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(count));
}

}  // namespace qfit::phantom
