#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace kavg {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Philox4x32-10 (Salmon et al., SC'11). Pure function of (counter, key).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

}  // namespace detail

/// Counter-based random source keyed by (seed, stream).
///
/// Output block i is philox(counter = {i, stream}, key = seed), so a source is
/// fully determined by its two ids and the number of values already drawn.
/// Satisfies UniformRandomBitGenerator. Not thread-safe; give each worker its
/// own stream via derive().
class RandomSource {
 public:
  using result_type = std::uint32_t;

  RandomSource(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (lane_ == 4) refill();
    return block_[lane_++];
  }

  /// 64 random bits.
  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1).
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Uniform integer in [0, n) by Lemire's multiply-and-reject method.
  std::uint64_t index(std::uint64_t n) {
    if (n <= 1) return 0;
    if (n <= (std::uint64_t{1} << 32)) {
      const std::uint64_t bound = n;
      std::uint64_t m = static_cast<std::uint64_t>((*this)()) * bound;
      auto low = static_cast<std::uint32_t>(m);
      if (low < bound) {
        const auto threshold = static_cast<std::uint32_t>((std::uint64_t{1} << 32) % bound);
        while (low < threshold) {
          m = static_cast<std::uint64_t>((*this)()) * bound;
          low = static_cast<std::uint32_t>(m);
        }
      }
      return m >> 32;
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal draw (Box-Muller; the second variate is cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Exponential draw with the given rate.
  double exponential(double rate) { return -std::log(uniform_open()) / rate; }

  /// Independent child source; children of distinct (a, b) never share a stream in practice.
  RandomSource derive(std::uint64_t a, std::uint64_t b = 0) const {
    const std::uint64_t h = detail::splitmix64(detail::splitmix64(stream_ ^ detail::splitmix64(a)) + b);
    return RandomSource(seed_, h);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill() {
    block_ = detail::philox4x32(
        {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    ++counter_;
    lane_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int lane_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// One draw from N(0, sigma^2 I_d).
inline std::vector<double> gaussian_noise(RandomSource& rng, int d, double sigma) {
  std::vector<double> out(static_cast<std::size_t>(d));
  for (auto& v : out) v = sigma * rng.normal();
  return out;
}

}  // namespace kavg
