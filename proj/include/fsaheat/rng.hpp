#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "fsaheat/common.hpp"

namespace fsaheat {

// splitmix64; used to derive independent stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag,
                                 std::uint64_t index) {
  std::uint64_t h = fnv1a(tag);
  h = fnv1a(&master, sizeof(master), h);
  h = fnv1a(&index, sizeof(index), h);
  return mix_seed(h);
}

// mt19937_64 with our own distribution mappings, so sampled sequences do
// not depend on the standard library's unspecified distribution
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    check(lo <= hi, "Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
    // Multiply-shift map; bias is < 2^-64 * span, irrelevant at our ranges.
    const std::uint64_t x = next_u64();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * span;
    return lo + static_cast<std::int64_t>(m >> 64);
  }

  // Box-Muller without pair caching: two uniforms per normal draw.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  // Normal truncated below at `lo` by rejection.
  double truncated_normal(double mean, double stddev, double lo) {
    for (;;) {
      const double v = normal(mean, stddev);
      if (v >= lo) return v;
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fsaheat
