#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfit/signal_models.hpp"
#include "qfit/types.hpp"

namespace qfit::phantom {

/// Ellipse in normalized coordinates: x, y in [-1, 1] across the grid, y down.
struct Region {
  std::string label;
  double center_x = 0.0;
  double center_y = 0.0;
  double radius_x = 0.5;
  double radius_y = 0.5;
  double angle_rad = 0.0;
  physics::TissueParams tissue;
};

struct PhantomSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  // Painted in order; later regions overwrite earlier ones.
  std::vector<Region> regions;
  // Relative amplitude of the smooth multiplicative intra-region field.
  double variation = 0.05;
  std::uint64_t seed = 1;

  void validate() const;

  /// Gray matter, white matter, two CSF ventricles and a lesion on an empty
  /// background.
  static PhantomSpec brain(std::size_t height = 64, std::size_t width = 64, std::uint64_t seed = 1,
                           double variation = 0.05);
};

struct Phantom {
  ParameterMap m0;
  ParameterMap t1;
  ParameterMap t2;
  Mask mask;
  // Index into PhantomSpec::regions, -1 for background.
  std::vector<int> region;
};

Phantom make_phantom(const PhantomSpec& spec);

/// i.i.d. N(0, variance) added to every real (and imaginary) element.
ContrastStack add_gaussian_noise(const ContrastStack& stack, double variance, std::uint64_t seed);

/// Per-frame phase-encode sampling masks (lines x frames, frame-major): the
/// central `center_lines` lines plus a random remainder up to lines / R.
std::vector<std::vector<std::uint8_t>> undersampling_pattern(std::size_t lines, std::size_t frames,
                                                             std::size_t acceleration, std::uint64_t seed,
                                                             std::size_t center_lines = 8);

/// Retrospective Cartesian undersampling of every frame with a zero-filled
/// inverse transform. Phase encoding runs along y. Returns a complex stack.
ContrastStack undersample_frames(const ContrastStack& stack, std::size_t acceleration, std::uint64_t seed,
                                 std::size_t center_lines = 8);

/// Root mean squared error over voxels where mask is set.
double rmse(const ParameterMap& estimate, const ParameterMap& truth, const Mask& mask);

}  // namespace qfit::phantom
