#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfit/signal_models.hpp"
#include "qfit/subspace.hpp"
#include "qfit/training.hpp"
#include "qfit/types.hpp"

namespace qfit::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { kF64, kC128 };

std::string dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

/// Self-describing volume: a single-line JSON header, a newline, then the
/// little-endian row-major payload. Complex elements are (re, im) pairs.
struct VolumeContainer {
  DType dtype = DType::kF64;
  std::vector<std::size_t> dims;
  std::vector<std::string> dim_labels;
  std::string units;
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> data;

  std::size_t element_count() const;
  std::size_t scalar_count() const { return element_count() * (dtype == DType::kC128 ? 2 : 1); }
  std::size_t payload_bytes() const { return scalar_count() * sizeof(double); }
  void validate() const;
  nlohmann::json header() const;
};

inline constexpr const char* kMagic = "QFIT1";

std::string serialize_volume(const VolumeContainer& volume);
VolumeContainer parse_volume(const std::string& bytes);

void save_volume(const std::filesystem::path& path, const VolumeContainer& volume);
VolumeContainer load_volume(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

VolumeContainer from_stack(const ContrastStack& stack, const std::string& units = "a.u.");
ContrastStack to_stack(const VolumeContainer& volume);

/// (2, H, W): values, then the validity flags as 0/1.
VolumeContainer from_map(const ParameterMap& map);
ParameterMap to_map(const VolumeContainer& volume);

VolumeContainer from_dictionary(const physics::Dictionary& dictionary);
physics::Dictionary to_dictionary(const VolumeContainer& volume);

VolumeContainer from_basis(const subspace::SubspaceBasis& basis);
subspace::SubspaceBasis to_basis(const VolumeContainer& volume);

/// (2K, H, W) planes, real parts first.
VolumeContainer from_coefficients(const subspace::CoefficientMaps& coefficients);
subspace::CoefficientMaps to_coefficients(const VolumeContainer& volume);

/// Flat parameter vector followed by the Adam moments; shapes and the loss
/// history travel in the header.
VolumeContainer from_checkpoint(const train::Checkpoint& checkpoint);
train::Checkpoint to_checkpoint(const VolumeContainer& volume);

struct Window {
  double width = 1.0;
  double level = 0.5;
};

/// Linear window/level to 8 bits: lround(255 * clamp((v - level) / width + 0.5)).
/// Invalid voxels are black.
std::vector<std::uint8_t> render_map(const ParameterMap& map, const Window& window);
std::string encode_png(const std::vector<std::uint8_t>& gray, std::size_t height, std::size_t width);
void export_map_png(const ParameterMap& map, const Window& window, const std::filesystem::path& path);

}  // namespace qfit::io
