#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace simcl {

// Counter-free splittable PRNG built on the splitmix64 finalizer.
//
// std::mt19937_64 is portable but the standard *distributions* are not, so
// all sampling here is hand-rolled from raw 64-bit draws. Every consumer in
// the codebase (augmentation, init, shuffling, synthetic data) goes through
// this type, which makes run outputs a pure function of the seeds.
//
// Draw-count discipline: callers that need reproducible stream positions
// (the augmentation ops) consume a fixed number of draws per operation
// regardless of branch outcomes.

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// Order-sensitive combine of two 64-bit values into a child seed.
inline std::uint64_t hash_combine64(std::uint64_t a, std::uint64_t b) {
  return splitmix64_mix(a + 0x9E3779B97F4A7C15ULL * (splitmix64_mix(b) | 1ULL));
}

class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t seed() const { return state_ - 0x9E3779B97F4A7C15ULL * pos_; }
  std::uint64_t position() const { return pos_; }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    ++pos_;
    return splitmix64_mix(state_);
  }

  // Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n == 0 is a caller bug; returns 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller; always consumes exactly two draws.
  double normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Child stream independent of this stream's position.
  Rng fork(std::uint64_t index) const { return Rng(hash_combine64(seed(), index)); }

  template <typename Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(c[i - 1], c[j]);
    }
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t pos_ = 0;
};

}  // namespace simcl
