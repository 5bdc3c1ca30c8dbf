#pragma once

// Little-endian binary encoding.
//
// Tensor blob ("KTNS"):  magic[4] | u32 rank | u64 dims[rank] | f64 values[numel]

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "kinform/tensor.hpp"

namespace kinform::binary {

inline constexpr char kTensorMagic[4] = {'K', 'T', 'N', 'S'};

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("unexpected end of binary stream");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1u << 24) {
  const auto n = read_le<std::uint32_t>(is);
  if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("unexpected end of binary stream");
  return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, d);
  for (Real v : t.data()) write_le<double>(os, static_cast<double>(v));
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("unexpected end of stream reading tensor magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad tensor magic (expected KTNS)");
  const auto rank = read_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw IoError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t total = 1;
  for (auto& d : shape) {
    const auto v = read_le<std::uint64_t>(is);
    if (v == 0 || v > (1ULL << 32)) throw IoError("bad tensor dimension " + std::to_string(v));
    d = static_cast<std::size_t>(v);
    total *= v;
    if (total > (1ULL << 32)) throw IoError("tensor too large");
  }
  std::vector<Real> values(static_cast<std::size_t>(total));
  for (auto& v : values) v = static_cast<Real>(read_le<double>(is));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace kinform::binary
