#pragma once

#include <span>

#include "qfit/signal_models.hpp"
#include "qfit/types.hpp"

namespace qfit::fit {

struct T2Bounds {
  double min_ms = 1.0;
  double max_ms = 3000.0;
  void validate() const;
};

struct FitResult {
  double m0 = 0.0;
  double t2_ms = 0.0;
  double residual_norm = 0.0;
  bool converged = false;
};

struct VarproOptions {
  T2Bounds bounds;
  std::size_t grid_points = 200;
  double tolerance_ms = 1e-4;
};

/// Separable fit of s = M0 exp(-TE/T2): M0 is eliminated in closed form, the
/// projected residual is searched on a log-spaced T2 grid and refined by
/// golden-section search.
FitResult varpro_fit(std::span<const double> signal, const physics::EchoProtocol& protocol,
                     const VarproOptions& options = {});

/// Weighted (w = s^2) linear regression of ln s on TE. Throws std::domain_error
/// on a non-positive sample.
FitResult loglinear_fit(std::span<const double> signal, const physics::EchoProtocol& protocol,
                        const T2Bounds& bounds = {});

/// Exhaustive normalized inner-product search over every atom.
MatchResult dict_match_full(std::span<const Complex> signal, const physics::Dictionary& dictionary);

enum class Method { kVarpro, kLogLinear };

struct VolumeFitOptions {
  Method method = Method::kVarpro;
  VarproOptions varpro;
  std::size_t threads = 1;
};

struct FitMaps {
  ParameterMap m0;
  ParameterMap t2;
};

/// Applies the chosen estimator to every voxel inside `mask` (all voxels when
/// null). Per-voxel failures mark the voxel invalid.
FitMaps fit_volume(const ContrastStack& stack, const physics::EchoProtocol& protocol, const Mask* mask,
                   const VolumeFitOptions& options = {});

}  // namespace qfit::fit
