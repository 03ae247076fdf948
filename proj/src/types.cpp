#include "qfit/types.hpp"

#include <cmath>
#include <stdexcept>

namespace qfit {

ContrastStack ContrastStack::zeros(std::size_t frames, std::size_t height, std::size_t width, bool complex) {
  ContrastStack s;
  s.frames = frames;
  s.height = height;
  s.width = width;
  s.real.assign(frames * height * width, 0.0);
  if (complex) s.imag.assign(frames * height * width, 0.0);
  return s;
}

std::vector<Complex> ContrastStack::voxel(std::size_t pixel) const {
  std::vector<Complex> out(frames);
  for (std::size_t f = 0; f < frames; ++f) out[f] = at(f, pixel);
  return out;
}

double ContrastStack::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const double v = is_complex() ? std::hypot(real[i], imag[i]) : std::abs(real[i]);
    if (v > m) m = v;
  }
  return m;
}

void ContrastStack::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw std::invalid_argument("contrast stack has an empty extent");
  if (real.size() != size()) throw std::invalid_argument("contrast stack real plane has wrong size");
  if (!imag.empty() && imag.size() != size()) {
    throw std::invalid_argument("contrast stack imaginary plane has wrong size");
  }
  if (!timing_ms.empty() && timing_ms.size() != frames) {
    throw std::invalid_argument("contrast stack timing does not match frame count");
  }
}

ParameterMap ParameterMap::filled(std::size_t height, std::size_t width, double value, std::string quantity,
                                  std::string unit) {
  ParameterMap m;
  m.height = height;
  m.width = width;
  m.values.assign(height * width, value);
  m.valid.assign(height * width, 1);
  m.quantity = std::move(quantity);
  m.unit = std::move(unit);
  return m;
}

}  // namespace qfit
