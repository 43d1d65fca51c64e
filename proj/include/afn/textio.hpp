#pragma once

#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "afn/errors.hpp"

namespace afn {

// Locale-independent decimal with 17 significant digits; round-trips every
// finite double exactly.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

// Strict full-token parse.
inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("expected a number for " + what + ", got '" +
                    std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string& what) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("expected an integer for " + what + ", got '" +
                    std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                             std::uint64_t seed = 0xCBF29CE484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

}  // namespace afn
