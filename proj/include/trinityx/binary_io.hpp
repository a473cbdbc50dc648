// Little-endian binary encoding helpers for the checkpoint containers.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "trinityx/error.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("unexpected end of binary stream");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
inline std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
inline void write_f64(std::ostream& os, double v) { write_le(os, v); }
inline double read_f64(std::istream& is) { return read_le<double>(is); }

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), magic.size()); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic)
    throw IoError("bad magic: expected \"" + std::string(magic) + "\", found \"" +
                  std::string(got.data(), static_cast<std::size_t>(std::max<std::streamsize>(is.gcount(), 0))) +
                  "\"");
}

/// u64 byte length followed by the UTF-8 bytes.
inline void write_string(std::ostream& os, std::string_view s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const auto n = read_u64(is);
  if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("unexpected end of binary stream");
  return s;
}

/// Raw row-major values; the shape is written by the caller.
inline void write_values(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) write_f64(os, x);
}

inline std::vector<double> read_values(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = read_f64(is);
  return v;
}

/// rows, cols, then the values.
inline void write_matrix(std::ostream& os, const Matrix& m) {
  write_u64(os, m.rows());
  write_u64(os, m.cols());
  write_values(os, m.data());
}

inline Matrix read_matrix(std::istream& is, std::size_t max_elems = std::size_t{1} << 28) {
  const auto r = read_u64(is);
  const auto c = read_u64(is);
  if (c != 0 && r > max_elems / c) throw IoError("matrix too large in binary stream");
  return Matrix(r, c, read_values(is, r * c));
}

inline void write_vector(std::ostream& os, const Vector& v) {
  write_u64(os, v.size());
  write_values(os, v);
}

inline Vector read_vector(std::istream& is, std::size_t max_elems = std::size_t{1} << 28) {
  const auto n = read_u64(is);
  if (n > max_elems) throw IoError("vector too large in binary stream");
  return read_values(is, n);
}

}  // namespace trinityx::binio
