#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qfit {

using Complex = std::complex<double>;

/// Frames of H x W images, frame-major ([frame][y][x]). Complex stacks carry
/// the imaginary plane separately; real stacks leave `imag` empty.
struct ContrastStack {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> real;
  std::vector<double> imag;
  // Echo time (multi-echo) or repetition time (MRF) per frame, ms.
  std::vector<double> timing_ms;

  static ContrastStack zeros(std::size_t frames, std::size_t height, std::size_t width, bool complex);

  bool is_complex() const { return !imag.empty(); }
  std::size_t plane() const { return height * width; }
  std::size_t size() const { return frames * height * width; }
  std::size_t index(std::size_t frame, std::size_t y, std::size_t x) const {
    return (frame * height + y) * width + x;
  }
  Complex at(std::size_t frame, std::size_t pixel) const {
    const std::size_t i = frame * plane() + pixel;
    return {real[i], is_complex() ? imag[i] : 0.0};
  }
  // Time course of one pixel.
  std::vector<Complex> voxel(std::size_t pixel) const;
  double max_magnitude() const;
  void validate() const;
};

/// One physical quantity over an H x W grid with a per-voxel validity flag.
struct ParameterMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;
  std::string quantity;
  std::string unit;

  static ParameterMap filled(std::size_t height, std::size_t width, double value, std::string quantity = {},
                             std::string unit = {});

  std::size_t size() const { return height * width; }
  bool same_grid(const ParameterMap& other) const {
    return height == other.height && width == other.width;
  }
};

using Mask = std::vector<std::uint8_t>;

/// Outcome of matching one time course against a dictionary.
struct MatchResult {
  std::size_t index = 0;
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  // Least-squares complex amplitude relative to the unscaled atom (M0 * phase).
  Complex scale{0.0, 0.0};
  // Normalized inner-product magnitude of the winning atom.
  double score = 0.0;
};

}  // namespace qfit
