#include "qfit/subspace.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "qfit/ops.hpp"

namespace qfit::subspace {

void SubspaceBasis::validate() const {
  if (rank == 0 || timepoints == 0 || phi.size() != rank * timepoints) {
    throw std::invalid_argument("subspace basis has inconsistent extents");
  }
}

std::size_t select_rank(std::span<const double> singular_values, double energy_target) {
  if (!(energy_target > 0.0 && energy_target <= 1.0)) {
    throw std::invalid_argument("energy target must lie in (0, 1]");
  }
  double total = 0.0;
  for (double s : singular_values) total += s * s;
  if (!(total > 0.0)) throw std::domain_error("degenerate spectrum: all singular values are zero");
  if (energy_target >= 1.0) {
    // Numerical rank: rounding in the cumulative sum must not drop directions.
    const double top = *std::max_element(singular_values.begin(), singular_values.end());
    const auto rank = static_cast<std::size_t>(std::count_if(singular_values.begin(), singular_values.end(),
                                                             [&](double s) { return s > 1e-12 * top; }));
    return std::max<std::size_t>(rank, 1);
  }
  double cumulative = 0.0;
  for (std::size_t k = 0; k < singular_values.size(); ++k) {
    cumulative += singular_values[k] * singular_values[k];
    if (cumulative / total >= energy_target) return k + 1;
  }
  return singular_values.size();
}

SubspaceBasis compress_dictionary(const physics::Dictionary& dictionary, double energy_target) {
  if (dictionary.size() == 0) throw std::invalid_argument("compress_dictionary: empty dictionary");
  const std::size_t t = dictionary.timepoints;

  // Rows: real and imaginary parts of each unit atom; all-zero rows carry no
  // energy and are skipped.
  std::vector<const Complex*> atoms;
  std::vector<bool> imaginary;
  for (std::size_t a = 0; a < dictionary.size(); ++a) {
    const auto atom = dictionary.unit_atom(a);
    bool any_real = false, any_imag = false;
    for (const Complex& v : atom) {
      any_real = any_real || v.real() != 0.0;
      any_imag = any_imag || v.imag() != 0.0;
    }
    if (any_real) {
      atoms.push_back(atom.data());
      imaginary.push_back(false);
    }
    if (any_imag) {
      atoms.push_back(atom.data());
      imaginary.push_back(true);
    }
  }
  if (atoms.empty()) throw std::domain_error("compress_dictionary: degenerate (all-zero) dictionary");

  Eigen::MatrixXd a(atoms.size(), t);
  for (std::size_t r = 0; r < atoms.size(); ++r) {
    for (std::size_t j = 0; j < t; ++j) a(r, j) = imaginary[r] ? atoms[r][j].imag() : atoms[r][j].real();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);

  SubspaceBasis basis;
  basis.timepoints = t;
  basis.energy_target = energy_target;
  const Eigen::VectorXd& sv = svd.singularValues();
  basis.singular_values.assign(sv.data(), sv.data() + sv.size());
  basis.rank = select_rank(basis.singular_values, energy_target);

  double total = 0.0, kept = 0.0;
  for (std::size_t k = 0; k < basis.singular_values.size(); ++k) {
    const double e = basis.singular_values[k] * basis.singular_values[k];
    total += e;
    if (k < basis.rank) kept += e;
  }
  basis.retained_energy = kept / total;

  const Eigen::MatrixXd& v = svd.matrixV();
  basis.phi.resize(basis.rank * t);
  for (std::size_t k = 0; k < basis.rank; ++k) {
    // Sign convention: the largest-magnitude entry of each row is positive.
    Eigen::Index arg = 0;
    v.col(static_cast<Eigen::Index>(k)).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, static_cast<Eigen::Index>(k)) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < t; ++j) basis.phi[k * t + j] = sign * v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }
  return basis;
}

CoefficientMaps CoefficientMaps::zeros(std::size_t rank, std::size_t height, std::size_t width) {
  CoefficientMaps c;
  c.rank = rank;
  c.height = height;
  c.width = width;
  c.real.assign(rank * height * width, 0.0);
  c.imag.assign(rank * height * width, 0.0);
  return c;
}

std::vector<Complex> CoefficientMaps::voxel(std::size_t pixel) const {
  std::vector<Complex> out(rank);
  for (std::size_t k = 0; k < rank; ++k) out[k] = at(k, pixel);
  return out;
}

std::vector<Complex> project(std::span<const Complex> signal, const SubspaceBasis& basis) {
  basis.validate();
  if (signal.size() != basis.timepoints) {
    throw std::invalid_argument("project: signal length " + std::to_string(signal.size()) +
                                " does not match basis length " + std::to_string(basis.timepoints));
  }
  std::vector<Complex> c(basis.rank);
  for (std::size_t k = 0; k < basis.rank; ++k) {
    const auto row = basis.row(k);
    Complex acc = 0.0;
    for (std::size_t t = 0; t < basis.timepoints; ++t) acc += signal[t] * row[t];
    c[k] = acc;
  }
  return c;
}

std::vector<Complex> synthesize(std::span<const Complex> coefficients, const SubspaceBasis& basis) {
  basis.validate();
  if (coefficients.size() != basis.rank) {
    throw std::invalid_argument("synthesize: " + std::to_string(coefficients.size()) +
                                " coefficients for a rank-" + std::to_string(basis.rank) + " basis");
  }
  std::vector<Complex> s(basis.timepoints, Complex(0.0, 0.0));
  for (std::size_t k = 0; k < basis.rank; ++k) {
    const auto row = basis.row(k);
    for (std::size_t t = 0; t < basis.timepoints; ++t) s[t] += coefficients[k] * row[t];
  }
  return s;
}

CoefficientMaps project_stack(const ContrastStack& stack, const SubspaceBasis& basis) {
  stack.validate();
  basis.validate();
  if (stack.frames != basis.timepoints) {
    throw std::invalid_argument("project_stack: stack has " + std::to_string(stack.frames) + " frames, basis " +
                                std::to_string(basis.timepoints));
  }
  CoefficientMaps c = CoefficientMaps::zeros(basis.rank, stack.height, stack.width);
  const std::size_t plane = stack.plane();
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> phi(basis.phi.data(), basis.rank, basis.timepoints);
  Eigen::Map<const RowMatrix> re(stack.real.data(), stack.frames, plane);
  Eigen::Map<RowMatrix>(c.real.data(), basis.rank, plane).noalias() = phi * re;
  if (stack.is_complex()) {
    Eigen::Map<const RowMatrix> im(stack.imag.data(), stack.frames, plane);
    Eigen::Map<RowMatrix>(c.imag.data(), basis.rank, plane).noalias() = phi * im;
  }
  return c;
}

ContrastStack synth_timeseries(const CoefficientMaps& coefficients, const SubspaceBasis& basis) {
  basis.validate();
  if (coefficients.rank != basis.rank) {
    throw std::invalid_argument("synth_timeseries: coefficient rank " + std::to_string(coefficients.rank) +
                                " does not match basis rank " + std::to_string(basis.rank));
  }
  const std::size_t plane = coefficients.plane();
  ContrastStack out = ContrastStack::zeros(basis.timepoints, coefficients.height, coefficients.width, true);
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> phi(basis.phi.data(), basis.rank, basis.timepoints);
  Eigen::Map<RowMatrix>(out.real.data(), basis.timepoints, plane).noalias() =
      phi.transpose() * Eigen::Map<const RowMatrix>(coefficients.real.data(), basis.rank, plane);
  Eigen::Map<RowMatrix>(out.imag.data(), basis.timepoints, plane).noalias() =
      phi.transpose() * Eigen::Map<const RowMatrix>(coefficients.imag.data(), basis.rank, plane);
  return out;
}

ad::Tensor basis_tensor(const SubspaceBasis& basis) {
  basis.validate();
  return ad::Tensor::constant({basis.rank, basis.timepoints}, basis.phi);
}

TimeSeriesTensors synth_timeseries(const ad::Tensor& coefficient_planes, const ad::Tensor& phi) {
  if (phi.rank() != 2) throw ad::ShapeError("synth_timeseries: phi must be (K, T)");
  const std::size_t k = phi.dim(0);
  if (coefficient_planes.rank() != 4 || coefficient_planes.dim(1) != 2 * k) {
    throw ad::ShapeError("synth_timeseries: expected (1, " + std::to_string(2 * k) + ", H, W) coefficients, got " +
                         ad::shape_string(coefficient_planes.shape()));
  }
  const ad::Tensor re = ad::channels_to_rows(ad::slice_channels(coefficient_planes, 0, k));
  const ad::Tensor im = ad::channels_to_rows(ad::slice_channels(coefficient_planes, k, k));
  return {ad::matmul(re, phi), ad::matmul(im, phi)};
}

TimeSeriesTensors stack_to_rows(const ContrastStack& stack) {
  stack.validate();
  const std::size_t plane = stack.plane();
  std::vector<double> re(plane * stack.frames), im(plane * stack.frames, 0.0);
  for (std::size_t f = 0; f < stack.frames; ++f) {
    for (std::size_t p = 0; p < plane; ++p) {
      re[p * stack.frames + f] = stack.real[f * plane + p];
      if (stack.is_complex()) im[p * stack.frames + f] = stack.imag[f * plane + p];
    }
  }
  return {ad::Tensor::constant({plane, stack.frames}, std::move(re)),
          ad::Tensor::constant({plane, stack.frames}, std::move(im))};
}

CompressedDictionary compress_atoms(const physics::Dictionary& dictionary, const SubspaceBasis& basis) {
  if (dictionary.size() == 0) throw std::invalid_argument("compress_atoms: empty dictionary");
  if (dictionary.timepoints != basis.timepoints) throw std::invalid_argument("compress_atoms: length mismatch");
  CompressedDictionary out;
  out.rank = basis.rank;
  out.t1_ms = dictionary.t1_ms;
  out.t2_ms = dictionary.t2_ms;
  out.coefficients.resize(dictionary.size() * basis.rank);
  out.coefficient_norms.resize(dictionary.size());
  for (std::size_t a = 0; a < dictionary.size(); ++a) {
    const auto c = project(dictionary.atom(a), basis);
    double energy = 0.0;
    for (std::size_t k = 0; k < basis.rank; ++k) {
      out.coefficients[a * basis.rank + k] = c[k];
      energy += std::norm(c[k]);
    }
    out.coefficient_norms[a] = std::sqrt(energy);
  }
  return out;
}

MatchResult match_compressed(std::span<const Complex> coefficients, const CompressedDictionary& dictionary) {
  if (dictionary.size() == 0) throw std::invalid_argument("match_compressed: empty dictionary");
  const std::size_t k = dictionary.rank;
  if (coefficients.size() != k) {
    throw std::invalid_argument("match_compressed: expected " + std::to_string(k) + " coefficients, got " +
                                std::to_string(coefficients.size()));
  }
  double query_energy = 0.0;
  for (const Complex& c : coefficients) query_energy += std::norm(c);
  const double query_norm = std::sqrt(query_energy);

  MatchResult best;
  double best_score = -1.0;
  Complex best_inner = 0.0;
  for (std::size_t a = 0; a < dictionary.size(); ++a) {
    const Complex* atom = dictionary.coefficients.data() + a * k;
    Complex inner = 0.0;
    for (std::size_t j = 0; j < k; ++j) inner += std::conj(atom[j]) * coefficients[j];
    const double denom = dictionary.coefficient_norms[a] * query_norm;
    const double score = denom > 0.0 ? std::abs(inner) / denom : 0.0;
    if (score > best_score) {
      best_score = score;
      best.index = a;
      best_inner = inner;
    }
  }
  const double atom_norm = dictionary.coefficient_norms[best.index];
  best.t1_ms = dictionary.t1_ms[best.index];
  best.t2_ms = dictionary.t2_ms[best.index];
  best.score = best_score;
  best.scale = atom_norm > 0.0 ? best_inner / (atom_norm * atom_norm) : Complex(0.0, 0.0);
  return best;
}

}  // namespace qfit::subspace
