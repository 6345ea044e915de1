#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cms {

// Fixed 64-bit mixing function (splitmix64 finalizer). Seedless and
// platform-independent; fingerprints, corpus hashes and the docking stub
// all build on it, so the constants must never change.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Pinned string hash: FNV-1a over the bytes, then mixed.
constexpr std::uint64_t hash64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
  return mix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

// Deterministic RNG with its own distributions. std::*_distribution output
// is not pinned by the standard, so uniform/normal are implemented here to
// keep seeded runs byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform in [0, n) via rejection of the biased tail.
  std::uint64_t next_below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Uniform integer in [lo, hi], inclusive.
  long long uniform_int(long long lo, long long hi) noexcept {
    return lo + static_cast<long long>(
                    next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Box-Muller, cosine branch only so one call consumes exactly two draws.
  double normal(double mean, double stddev) noexcept {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    return mean + stddev * r * std::cos(theta);
  }

  // Child stream derivation: seed -> phase -> epoch -> example index. Each
  // derived stream is independent of how many draws the parent has made.
  Rng derive(std::uint64_t tag) const noexcept {
    return Rng(mix64(state_ ^ mix64(tag)));
  }
  Rng derive(std::string_view tag) const noexcept {
    return Rng(mix64(state_ ^ hash64(tag)));
  }

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

}  // namespace cms
