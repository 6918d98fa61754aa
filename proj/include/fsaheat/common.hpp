#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fsaheat {

// Library errors are reported as std::invalid_argument (bad inputs /
// contract violations) or std::runtime_error (failures at run time,
// e.g. a solver not converging).
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// FNV-1a, used for config digests and seed derivation. Not cryptographic.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace fsaheat
