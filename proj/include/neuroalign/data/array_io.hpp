#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "neuroalign/core/types.hpp"

namespace neuroalign::data {

static_assert(std::endian::native == std::endian::little, "array container assumes a little-endian host");

// Array container: "NARR", u8 dtype, u8 ndim, u16 reserved, u64 dims[ndim], then little-endian data.
enum class DType : std::uint8_t { kFloat32 = 1, kInt32 = 2 };

inline constexpr char kArrayMagic[4] = {'N', 'A', 'R', 'R'};

namespace detail {

inline void write_header(std::ofstream& out, DType dt, const Shape& shape) {
  if (shape.size() > 255) throw DataError("array rank too large");
  out.write(kArrayMagic, 4);
  const std::uint8_t d = static_cast<std::uint8_t>(dt), nd = static_cast<std::uint8_t>(shape.size());
  const std::uint16_t reserved = 0;
  out.write(reinterpret_cast<const char*>(&d), 1);
  out.write(reinterpret_cast<const char*>(&nd), 1);
  out.write(reinterpret_cast<const char*>(&reserved), 2);
  for (std::size_t s : shape) {
    const std::uint64_t v = s;
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
}

inline Shape read_header(std::ifstream& in, DType expected, const std::string& path) {
  char magic[4];
  std::uint8_t d = 0, nd = 0;
  std::uint16_t reserved = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&d), 1);
  in.read(reinterpret_cast<char*>(&nd), 1);
  in.read(reinterpret_cast<char*>(&reserved), 2);
  if (!in || std::memcmp(magic, kArrayMagic, 4) != 0) throw DataError("'" + path + "' is not an array container");
  if (d != static_cast<std::uint8_t>(expected))
    throw DataError("'" + path + "' has dtype " + std::to_string(d) + ", expected " + std::to_string(static_cast<int>(expected)));
  Shape shape(nd);
  for (auto& s : shape) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    s = static_cast<std::size_t>(v);
  }
  if (!in) throw DataError("'" + path + "' has a truncated header");
  return shape;
}

// Writes to a sibling temp file and renames, so readers never see a partial file.
template <class Fn>
void atomic_write(const std::string& path, Fn&& fn) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    fn(out);
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

}  // namespace detail

inline void save_f32(const std::string& path, const Tensor& t) {
  detail::atomic_write(path, [&](std::ofstream& out) {
    detail::write_header(out, DType::kFloat32, t.shape());
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  });
}

// NaN or Inf anywhere is a load error.
inline Tensor load_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing array file '" + path + "'");
  Shape shape = detail::read_header(in, DType::kFloat32, path);
  std::vector<float> buf(shape_size(shape));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw DataError("'" + path + "' is truncated");
  Tensor t(shape);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (!std::isfinite(buf[i])) throw DataError("'" + path + "' contains NaN or Inf at flat index " + std::to_string(i));
    t[i] = buf[i];
  }
  return t;
}

struct IntArray {
  Shape shape;
  std::vector<std::int32_t> values;
};

inline void save_i32(const std::string& path, const IntArray& a) {
  if (shape_size(a.shape) != a.values.size()) throw DataError("int array shape does not match its data");
  detail::atomic_write(path, [&](std::ofstream& out) {
    detail::write_header(out, DType::kInt32, a.shape);
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(std::int32_t)));
  });
}

inline IntArray load_i32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing array file '" + path + "'");
  IntArray a;
  a.shape = detail::read_header(in, DType::kInt32, path);
  a.values.resize(shape_size(a.shape));
  in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(std::int32_t)));
  if (!in) throw DataError("'" + path + "' is truncated");
  return a;
}

// FNV-1a over a file's bytes; used for idempotence stamps and run metadata.
inline std::uint64_t hash_file(const std::string& path, std::uint64_t h = 1469598103934665603ull) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file '" + path + "'");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

}  // namespace neuroalign::data
