#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace geomeval {

/// Counter-based 64-bit generator.
///
/// Draw i of a stream with key K is splitmix64_mix(K + (i + 1)·0x9E3779B97F4A7C15).
/// Keys are derived from (seed, stream) by the same mixer, and split() derives a child
/// key from the parent key and a tag, so any draw can be reproduced without replaying
/// the stream. Doubles take the top 53 bits; normals use Box–Muller.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : key_(mix(mix(seed) ^ (stream * kGamma + 1))) {}

  /// Independent child stream.
  Rng split(std::uint64_t tag) const { return Rng(key_, tag, 0); }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
  }

  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  Rng(std::uint64_t parent_key, std::uint64_t tag, int) : key_(mix(parent_key ^ mix(tag + kGamma))) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace geomeval
