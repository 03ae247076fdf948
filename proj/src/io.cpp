#include "qfit/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace qfit::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

std::string dtype_name(DType dtype) { return dtype == DType::kF64 ? "f64" : "c128"; }

DType parse_dtype(const std::string& name) {
  if (name == "f64") return DType::kF64;
  if (name == "c128") return DType::kC128;
  throw FormatError("unknown dtype '" + name + "'");
}

std::size_t VolumeContainer::element_count() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void VolumeContainer::validate() const {
  if (dims.empty()) throw FormatError("volume has no dimensions");
  if (!dim_labels.empty() && dim_labels.size() != dims.size()) {
    throw FormatError("volume has " + std::to_string(dims.size()) + " dims but " +
                      std::to_string(dim_labels.size()) + " labels");
  }
  if (data.size() != scalar_count()) {
    throw FormatError("volume payload holds " + std::to_string(data.size()) + " values, dims require " +
                      std::to_string(scalar_count()));
  }
  if (!meta.is_object()) throw FormatError("volume metadata must be a JSON object");
}

json VolumeContainer::header() const {
  json h;
  h["magic"] = kMagic;
  h["dtype"] = dtype_name(dtype);
  h["dims"] = dims;
  h["dim_labels"] = dim_labels;
  h["units"] = units;
  h["meta"] = meta;
  h["seed"] = seed;
  h["config_hash"] = config_hash;
  h["payload_bytes"] = payload_bytes();
  return h;
}

std::string serialize_volume(const VolumeContainer& volume) {
  volume.validate();
  std::string out = volume.header().dump();
  out.push_back('\n');
  const std::size_t offset = out.size();
  out.resize(offset + volume.payload_bytes());
  std::memcpy(out.data() + offset, volume.data.data(), volume.payload_bytes());
  return out;
}

VolumeContainer parse_volume(const std::string& bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos) throw FormatError("volume header is not terminated");
  json h;
  try {
    h = json::parse(bytes.substr(0, newline));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("volume header is not valid JSON: ") + e.what());
  }
  if (!h.is_object() || h.value("magic", std::string()) != kMagic) {
    throw FormatError("magic mismatch: expected " + std::string(kMagic));
  }
  VolumeContainer v;
  try {
    v.dtype = parse_dtype(h.at("dtype").get<std::string>());
    v.dims = h.at("dims").get<std::vector<std::size_t>>();
    v.dim_labels = h.value("dim_labels", std::vector<std::string>{});
    v.units = h.value("units", std::string());
    v.meta = h.value("meta", json::object());
    v.seed = h.value("seed", std::uint64_t{0});
    v.config_hash = h.value("config_hash", std::string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed volume header: ") + e.what());
  }
  const std::size_t expected = v.payload_bytes();
  const std::size_t actual = bytes.size() - newline - 1;
  if (actual != expected) {
    throw FormatError("payload size mismatch: expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(actual));
  }
  v.data.resize(v.scalar_count());
  std::memcpy(v.data.data(), bytes.data() + newline + 1, expected);
  v.validate();
  return v;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) {
      fs::remove(tmp);
      throw std::runtime_error("failed writing '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void save_volume(const fs::path& path, const VolumeContainer& volume) {
  write_file_atomic(path, serialize_volume(volume));
}

VolumeContainer load_volume(const fs::path& path) { return parse_volume(read_file(path)); }

VolumeContainer from_stack(const ContrastStack& stack, const std::string& units) {
  stack.validate();
  VolumeContainer v;
  v.dtype = stack.is_complex() ? DType::kC128 : DType::kF64;
  v.dims = {stack.frames, stack.height, stack.width};
  v.dim_labels = {"frame", "y", "x"};
  v.units = units;
  v.meta["kind"] = "stack";
  v.meta["timing_ms"] = stack.timing_ms;
  if (stack.is_complex()) {
    v.data.resize(2 * stack.size());
    for (std::size_t i = 0; i < stack.size(); ++i) {
      v.data[2 * i] = stack.real[i];
      v.data[2 * i + 1] = stack.imag[i];
    }
  } else {
    v.data = stack.real;
  }
  return v;
}

ContrastStack to_stack(const VolumeContainer& v) {
  v.validate();
  if (v.dims.size() != 3) throw FormatError("stack volumes must have 3 dimensions (frame, y, x)");
  ContrastStack s = ContrastStack::zeros(v.dims[0], v.dims[1], v.dims[2], v.dtype == DType::kC128);
  if (v.dtype == DType::kC128) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.real[i] = v.data[2 * i];
      s.imag[i] = v.data[2 * i + 1];
    }
  } else {
    s.real = v.data;
  }
  if (v.meta.contains("timing_ms")) s.timing_ms = v.meta["timing_ms"].get<std::vector<double>>();
  s.validate();
  return s;
}

VolumeContainer from_map(const ParameterMap& map) {
  if (map.values.size() != map.size() || map.valid.size() != map.size()) {
    throw std::invalid_argument("parameter map storage does not match its grid");
  }
  VolumeContainer v;
  v.dims = {2, map.height, map.width};
  v.dim_labels = {"field", "y", "x"};
  v.units = map.unit;
  v.meta["kind"] = "map";
  v.meta["quantity"] = map.quantity;
  v.meta["fields"] = {"value", "valid"};
  v.data = map.values;
  v.data.reserve(2 * map.size());
  for (std::uint8_t f : map.valid) v.data.push_back(f ? 1.0 : 0.0);
  return v;
}

ParameterMap to_map(const VolumeContainer& v) {
  v.validate();
  if (v.dtype != DType::kF64 || v.dims.size() != 3 || v.dims[0] != 2) {
    throw FormatError("map volumes must be real with dims (2, H, W)");
  }
  ParameterMap m = ParameterMap::filled(v.dims[1], v.dims[2], 0.0, v.meta.value("quantity", std::string()), v.units);
  const std::size_t n = m.size();
  std::copy(v.data.begin(), v.data.begin() + static_cast<std::ptrdiff_t>(n), m.values.begin());
  for (std::size_t i = 0; i < n; ++i) m.valid[i] = v.data[n + i] != 0.0 ? 1 : 0;
  return m;
}

VolumeContainer from_dictionary(const physics::Dictionary& d) {
  VolumeContainer v;
  v.dtype = DType::kC128;
  v.dims = {d.size(), d.timepoints};
  v.dim_labels = {"atom", "time"};
  v.units = "a.u.";
  v.meta["kind"] = "dictionary";
  v.meta["t1_ms"] = d.t1_ms;
  v.meta["t2_ms"] = d.t2_ms;
  v.meta["norms"] = d.norms;
  v.meta["schedule_fingerprint"] = d.schedule_fingerprint;
  v.data.resize(2 * d.atoms.size());
  for (std::size_t i = 0; i < d.atoms.size(); ++i) {
    v.data[2 * i] = d.atoms[i].real();
    v.data[2 * i + 1] = d.atoms[i].imag();
  }
  return v;
}

physics::Dictionary to_dictionary(const VolumeContainer& v) {
  v.validate();
  if (v.dtype != DType::kC128 || v.dims.size() != 2 || v.meta.value("kind", std::string()) != "dictionary") {
    throw FormatError("not a dictionary volume");
  }
  std::vector<Complex> atoms(v.element_count());
  for (std::size_t i = 0; i < atoms.size(); ++i) atoms[i] = {v.data[2 * i], v.data[2 * i + 1]};
  physics::Dictionary d = physics::Dictionary::from_atoms(v.meta.at("t1_ms").get<std::vector<double>>(),
                                                          v.meta.at("t2_ms").get<std::vector<double>>(), v.dims[1],
                                                          std::move(atoms));
  d.schedule_fingerprint = v.meta.value("schedule_fingerprint", std::string());
  return d;
}

VolumeContainer from_basis(const subspace::SubspaceBasis& b) {
  b.validate();
  VolumeContainer v;
  v.dims = {b.rank, b.timepoints};
  v.dim_labels = {"component", "time"};
  v.meta["kind"] = "basis";
  v.meta["singular_values"] = b.singular_values;
  v.meta["retained_energy"] = b.retained_energy;
  v.meta["energy_target"] = b.energy_target;
  v.data = b.phi;
  return v;
}

subspace::SubspaceBasis to_basis(const VolumeContainer& v) {
  v.validate();
  if (v.dtype != DType::kF64 || v.dims.size() != 2 || v.meta.value("kind", std::string()) != "basis") {
    throw FormatError("not a basis volume");
  }
  subspace::SubspaceBasis b;
  b.rank = v.dims[0];
  b.timepoints = v.dims[1];
  b.phi = v.data;
  b.singular_values = v.meta.at("singular_values").get<std::vector<double>>();
  b.retained_energy = v.meta.at("retained_energy").get<double>();
  b.energy_target = v.meta.at("energy_target").get<double>();
  b.validate();
  return b;
}

VolumeContainer from_coefficients(const subspace::CoefficientMaps& c) {
  VolumeContainer v;
  v.dims = {2 * c.rank, c.height, c.width};
  v.dim_labels = {"plane", "y", "x"};
  v.meta["kind"] = "coefficients";
  v.meta["rank"] = c.rank;
  v.data = c.real;
  v.data.insert(v.data.end(), c.imag.begin(), c.imag.end());
  return v;
}

subspace::CoefficientMaps to_coefficients(const VolumeContainer& v) {
  v.validate();
  if (v.dtype != DType::kF64 || v.dims.size() != 3 || v.dims[0] % 2 != 0) {
    throw FormatError("coefficient volumes must be real with dims (2K, H, W)");
  }
  subspace::CoefficientMaps c = subspace::CoefficientMaps::zeros(v.dims[0] / 2, v.dims[1], v.dims[2]);
  const std::size_t half = c.real.size();
  std::copy(v.data.begin(), v.data.begin() + static_cast<std::ptrdiff_t>(half), c.real.begin());
  std::copy(v.data.begin() + static_cast<std::ptrdiff_t>(half), v.data.end(), c.imag.begin());
  return c;
}

VolumeContainer from_checkpoint(const train::Checkpoint& ck) {
  VolumeContainer v;
  std::size_t total = 0;
  for (const auto& p : ck.parameters) total += p.size();
  v.dims = {3, total};
  v.dim_labels = {"field", "index"};
  v.meta["kind"] = "checkpoint";
  v.meta["fields"] = {"parameters", "first_moment", "second_moment"};
  v.meta["shapes"] = ck.shapes;
  v.meta["adam_step"] = ck.optimizer.step;
  v.meta["loss_history"] = ck.loss_history;
  v.data.reserve(3 * total);
  for (const auto& p : ck.parameters) v.data.insert(v.data.end(), p.begin(), p.end());
  for (const auto* moments : {&ck.optimizer.first_moment, &ck.optimizer.second_moment}) {
    std::size_t n = 0;
    for (const auto& m : *moments) {
      v.data.insert(v.data.end(), m.begin(), m.end());
      n += m.size();
    }
    if (n != total) throw std::invalid_argument("checkpoint optimizer state does not match its parameters");
  }
  return v;
}

train::Checkpoint to_checkpoint(const VolumeContainer& v) {
  v.validate();
  if (v.meta.value("kind", std::string()) != "checkpoint" || v.dims.size() != 2 || v.dims[0] != 3) {
    throw FormatError("not a checkpoint volume");
  }
  train::Checkpoint ck;
  ck.shapes = v.meta.at("shapes").get<std::vector<ad::Shape>>();
  ck.optimizer.step = v.meta.at("adam_step").get<std::size_t>();
  ck.loss_history = v.meta.at("loss_history").get<std::vector<double>>();
  const std::size_t total = v.dims[1];
  std::size_t offset = 0;
  for (int field = 0; field < 3; ++field) {
    auto& target = field == 0 ? ck.parameters : field == 1 ? ck.optimizer.first_moment : ck.optimizer.second_moment;
    std::size_t pos = 0;
    for (const ad::Shape& s : ck.shapes) {
      const std::size_t n = ad::element_count(s);
      const auto begin = v.data.begin() + static_cast<std::ptrdiff_t>(offset + pos);
      target.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(n));
      pos += n;
    }
    if (pos != total) throw FormatError("checkpoint shapes do not cover the payload");
    offset += total;
  }
  return ck;
}

std::vector<std::uint8_t> render_map(const ParameterMap& map, const Window& window) {
  if (!(window.width > 0.0)) throw std::invalid_argument("window width must be positive");
  std::vector<std::uint8_t> out(map.size(), 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = map.values[i];
    if (!map.valid.empty() && !map.valid[i]) continue;
    if (!std::isfinite(v)) throw std::invalid_argument("cannot render a non-finite map value");
    const double t = std::clamp((v - window.level) / window.width + 0.5, 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * t));
  }
  return out;
}

namespace {

void append_png(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

}  // namespace

std::string encode_png(const std::vector<std::uint8_t>& gray, std::size_t height, std::size_t width) {
  if (gray.size() != height * width || height == 0 || width == 0) {
    throw std::invalid_argument("image buffer does not match its dimensions");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_png, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(gray.data() + y * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void export_map_png(const ParameterMap& map, const Window& window, const fs::path& path) {
  write_file_atomic(path, encode_png(render_map(map, window), map.height, map.width));
}

}  // namespace qfit::io
