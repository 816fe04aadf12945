#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <utility>

// Deterministic PRNG stack used throughout the library.
//
// All randomness flows through splitmix64 (seeding, stream derivation) and
// xoshiro256++ (generation). Uniform doubles come from the top 53 bits,
// normals from Box-Muller. No <random> distributions are used anywhere, so a
// (spec, n, seed) triple reproduces the same dataset byte-for-byte on any
// platform with IEEE-754 doubles.

namespace wermlab::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// One splitmix64 scramble of `state` (state is advanced by the caller).
inline std::uint64_t splitmix64_step(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += kGolden);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

// Documented stream derivation: independent streams for experiment cells are
// obtained as derive_stream(base, k) = splitmix64_step(base + kGolden * k).
inline std::uint64_t derive_stream(std::uint64_t base, std::uint64_t k) {
  return splitmix64_step(base + kGolden * k);
}

// xoshiro256++ (Blackman & Vigna), seeded through splitmix64.
class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased-enough index draw for shuffles (n is tiny vs 2^64).
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Box-Muller pair; consumes exactly two uniforms.
  std::pair<double, double> normal_pair() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

  // Single normal; consumes two uniforms, keeps no state.
  double normal() { return normal_pair().first; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

}  // namespace wermlab::rng
