#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace vit {

/// SplitMix64 generator (Steele, Lea & Flood 2014).
///
/// State is a single 64-bit counter advanced by the golden-ratio increment
/// 0x9E3779B97F4A7C15; each output is the counter passed through the
/// SplitMix64 finalizer. All derived distributions below are implemented here
/// rather than through <random> so streams are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  /// Independent stream keyed by (seed, ids...). Used for per-epoch shuffles,
  /// per-step dropout masks and per-item corruption.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() noexcept;

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() noexcept;

  /// Normal(0, stddev) resampled until |x| <= bound * stddev.
  double truncated_normal(double stddev, double bound = 2.0) noexcept;

  template <typename It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_int(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) noexcept;

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace vit
