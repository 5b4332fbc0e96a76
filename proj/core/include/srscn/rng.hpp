#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace srscn {

/// Deterministic random stream. mt19937_64 is fully specified by the
/// standard, and the uniform/normal transforms below avoid the
/// implementation-defined std distributions, so identical seeds give
/// identical draws on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range, rejection sampled (no modulo bias).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return lo + static_cast<int64_t>(r % range);
  }

  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::mt19937_64 eng_;
};

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent child seed from a base seed and a tag, so that
/// subsystems (phantom i, variant v, epoch e, ...) get decorrelated streams.
inline uint64_t mix_seed(uint64_t base, std::string_view tag) {
  return splitmix64(base ^ fnv1a64(tag.data(), tag.size()));
}

inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt));
}

}  // namespace srscn
