#pragma once

#include <cmath>
#include <cstdint>

namespace resq {

/// Deterministic PRNG used everywhere randomness is needed: batch plans,
/// parameter init, verification trials. xoshiro256** (Blackman & Vigna 2018)
/// seeded through splitmix64, so a single 64-bit seed fully determines the
/// stream and the constants below pin the sequence across builds.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    // splitmix64 expansion of the seed into the four state words.
    uint64_t x = seed;
    for (auto& w : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      w = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl_(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl_(state_[3], 45);
    return result;
  }

  /// Uniform in [0, bound). Rejection sampling keeps the draw unbiased.
  uint64_t next_below(uint64_t bound) {
    if (bound == 0) return 0;
    const uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    uint64_t r = next_u64();
    while (r < threshold) r = next_u64();
    return r % bound;
  }

  /// Uniform double in [0, 1) with 53 bits of randomness.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    const double angle = next_double() * two_pi;
    const double mag = std::sqrt(-2.0 * std::log(1.0 - next_double()));
    spare_ = mag * std::sin(angle);
    has_spare_ = true;
    return mag * std::cos(angle);
  }

 private:
  static constexpr uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over raw bytes; used for batch-identity checks and run digests.
inline uint64_t fnv1a(const void* bytes, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace resq
