#pragma once

// Tensor file format:
//   "CASCTNSR" | JSON header line terminated by '\n' | raw little-endian payload
// The header carries {dtype: "f32"|"u8", shape: [...], spacing?: [...], id?}.
// Payload is row-major with product(shape) elements.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"

namespace casc::io {

inline constexpr char kTensorMagic[8] = {'C', 'A', 'S', 'C', 'T', 'N', 'S', 'R'};

enum class DType { f32, u8 };

inline const char* to_string(DType d) { return d == DType::f32 ? "f32" : "u8"; }
inline std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 1; }

struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  std::optional<std::vector<double>> spacing;
  std::optional<std::string> id;
  std::vector<std::uint8_t> payload;  // little-endian bytes

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace detail {

inline std::vector<std::uint8_t> floats_to_le(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

inline std::vector<float> le_to_floats(const std::vector<std::uint8_t>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace detail

inline std::string header_line(const Tensor& t) {
  nlohmann::json h;
  h["dtype"] = to_string(t.dtype);
  h["shape"] = t.shape;
  if (t.spacing) h["spacing"] = *t.spacing;
  if (t.id) h["id"] = *t.id;
  return h.dump();
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.payload.size() != t.element_count() * element_size(t.dtype))
    fail(ErrorKind::shape, "write_tensor: payload size does not match shape");
  os.write(kTensorMagic, sizeof(kTensorMagic));
  const std::string h = header_line(t);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.put('\n');
  os.write(reinterpret_cast<const char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size()));
  if (!os) fail(ErrorKind::io, "write_tensor: stream write failed");
}

inline Tensor read_tensor(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0)
    fail(ErrorKind::io, "read_tensor: bad magic");
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::io, "read_tensor: missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, std::string("read_tensor: malformed header: ") + e.what());
  }
  Tensor t;
  const auto dtype = h.at("dtype").get<std::string>();
  if (dtype == "f32") {
    t.dtype = DType::f32;
  } else if (dtype == "u8") {
    t.dtype = DType::u8;
  } else {
    fail(ErrorKind::io, "read_tensor: unknown dtype " + dtype);
  }
  t.shape = h.at("shape").get<std::vector<std::size_t>>();
  if (h.contains("spacing")) t.spacing = h["spacing"].get<std::vector<double>>();
  if (h.contains("id")) t.id = h["id"].get<std::string>();
  t.payload.resize(t.element_count() * element_size(t.dtype));
  if (!is.read(reinterpret_cast<char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size())))
    fail(ErrorKind::io, "read_tensor: truncated payload");
  return t;
}

inline std::string to_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return std::move(os).str();
}

inline Tensor from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_tensor(is);
}

// Writes to a sibling temp file and renames, so readers never observe a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { atomic_write(path, to_bytes(t)); }

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path.string());
  return read_tensor(is);
}

// --- conversions --------------------------------------------------------------

inline Tensor to_tensor(const Grid2<float>& g, std::optional<std::string> id = std::nullopt) {
  return Tensor{DType::f32, {g.rows(), g.cols()}, std::nullopt, std::move(id), detail::floats_to_le(g.values())};
}

inline Tensor to_tensor(const Grid2<std::uint8_t>& g, std::optional<std::string> id = std::nullopt) {
  return Tensor{DType::u8, {g.rows(), g.cols()}, std::nullopt, std::move(id), g.storage()};
}

inline Tensor to_tensor(const Grid3<float>& g, std::optional<std::string> id = std::nullopt,
                        std::optional<Spacing> spacing = std::nullopt) {
  Tensor t{DType::f32, {g.depth(), g.rows(), g.cols()}, std::nullopt, std::move(id), detail::floats_to_le(g.values())};
  if (spacing) t.spacing = std::vector<double>{spacing->dz, spacing->dy, spacing->dx};
  return t;
}

inline Tensor to_tensor(const Grid3<std::uint8_t>& g, std::optional<std::string> id = std::nullopt,
                        std::optional<Spacing> spacing = std::nullopt) {
  Tensor t{DType::u8, {g.depth(), g.rows(), g.cols()}, std::nullopt, std::move(id), g.storage()};
  if (spacing) t.spacing = std::vector<double>{spacing->dz, spacing->dy, spacing->dx};
  return t;
}

inline Tensor to_tensor(const Volume& v) { return to_tensor(v.voxels, v.id, v.spacing); }

inline void expect(const Tensor& t, DType dtype, std::size_t rank, const char* what) {
  if (t.dtype != dtype || t.shape.size() != rank)
    fail(ErrorKind::shape, std::string(what) + ": expected " + to_string(dtype) + " tensor of rank " +
                               std::to_string(rank));
}

inline Grid2<float> to_image2d(const Tensor& t) {
  expect(t, DType::f32, 2, "to_image2d");
  return Grid2<float>(t.shape[0], t.shape[1], detail::le_to_floats(t.payload));
}

inline Grid2<std::uint8_t> to_mask2d(const Tensor& t) {
  expect(t, DType::u8, 2, "to_mask2d");
  return Grid2<std::uint8_t>(t.shape[0], t.shape[1], t.payload);
}

inline Grid3<float> to_grid3f(const Tensor& t) {
  expect(t, DType::f32, 3, "to_grid3f");
  return Grid3<float>(t.shape[0], t.shape[1], t.shape[2], detail::le_to_floats(t.payload));
}

inline Grid3<std::uint8_t> to_mask3d(const Tensor& t) {
  expect(t, DType::u8, 3, "to_mask3d");
  return Grid3<std::uint8_t>(t.shape[0], t.shape[1], t.shape[2], t.payload);
}

inline Spacing spacing_of(const Tensor& t, Spacing fallback = {}) {
  if (!t.spacing) return fallback;
  const auto& s = *t.spacing;
  if (s.size() != 3 || s[0] <= 0 || s[1] <= 0 || s[2] <= 0) fail(ErrorKind::shape, "tensor spacing must be 3 positive values");
  return Spacing{s[0], s[1], s[2]};
}

inline Volume to_volume(const Tensor& t, const std::string& fallback_id = {}, Spacing fallback_spacing = {}) {
  Volume v;
  v.voxels = to_grid3f(t);
  v.id = t.id.value_or(fallback_id);
  v.spacing = spacing_of(t, fallback_spacing);
  return v;
}

}  // namespace casc::io
