#pragma once

#include <span>
#include <vector>

#include "qfit/signal_models.hpp"
#include "qfit/tensor.hpp"
#include "qfit/types.hpp"

namespace qfit::subspace {

/// K x T real temporal basis with orthonormal rows.
struct SubspaceBasis {
  std::size_t rank = 0;
  std::size_t timepoints = 0;
  std::vector<double> phi;
  // Full spectrum of the (unit-normalized) dictionary, non-increasing.
  std::vector<double> singular_values;
  double retained_energy = 0.0;
  double energy_target = 0.0;

  std::span<const double> row(std::size_t k) const { return {phi.data() + k * timepoints, timepoints}; }
  void validate() const;
};

/// Smallest K with sum_{i<K} s_i^2 >= target * sum_i s_i^2.
std::size_t select_rank(std::span<const double> singular_values, double energy_target);

/// SVD of the unit-normalized atoms (real and imaginary parts as rows); phi
/// holds the leading right singular vectors.
SubspaceBasis compress_dictionary(const physics::Dictionary& dictionary, double energy_target = 0.95);

/// Per-voxel complex coefficients stored as K real and K imaginary planes.
struct CoefficientMaps {
  std::size_t rank = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> real;  // [k][y][x]
  std::vector<double> imag;

  static CoefficientMaps zeros(std::size_t rank, std::size_t height, std::size_t width);
  std::size_t plane() const { return height * width; }
  Complex at(std::size_t k, std::size_t pixel) const {
    return {real[k * plane() + pixel], imag[k * plane() + pixel]};
  }
  std::vector<Complex> voxel(std::size_t pixel) const;
};

std::vector<Complex> project(std::span<const Complex> signal, const SubspaceBasis& basis);
std::vector<Complex> synthesize(std::span<const Complex> coefficients, const SubspaceBasis& basis);

CoefficientMaps project_stack(const ContrastStack& stack, const SubspaceBasis& basis);
/// Time course per voxel = sum_k c_k phi_k.
ContrastStack synth_timeseries(const CoefficientMaps& coefficients, const SubspaceBasis& basis);

struct TimeSeriesTensors {
  ad::Tensor real;  // (H*W, T)
  ad::Tensor imag;
};

ad::Tensor basis_tensor(const SubspaceBasis& basis);

/// Differentiable synthesis from (1, 2K, H, W) planes (real planes first).
TimeSeriesTensors synth_timeseries(const ad::Tensor& coefficient_planes, const ad::Tensor& phi);

/// Stack -> (H*W, T) real and imaginary matrices, one row per pixel.
TimeSeriesTensors stack_to_rows(const ContrastStack& stack);

/// Dictionary atoms expressed in the subspace.
struct CompressedDictionary {
  std::size_t rank = 0;
  std::vector<double> t1_ms;
  std::vector<double> t2_ms;
  std::vector<Complex> coefficients;  // atoms x K, unscaled atoms
  std::vector<double> coefficient_norms;

  std::size_t size() const { return t1_ms.size(); }
};

CompressedDictionary compress_atoms(const physics::Dictionary& dictionary, const SubspaceBasis& basis);

/// Argmax of |<c, c_atom>| / (|c| |c_atom|); ties go to the lower index.
MatchResult match_compressed(std::span<const Complex> coefficients, const CompressedDictionary& dictionary);

}  // namespace qfit::subspace
