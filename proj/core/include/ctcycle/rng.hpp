#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace ctcycle {

// Deterministic PRNG used everywhere instead of <random>: the standard
// library distributions are not bit-reproducible across implementations,
// and training runs, checkpoints and phantoms all promise bit-identical
// replay for a fixed seed.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ with splitmix64 seeding. State is four u64 words, which the
/// checkpoint container stores as a named u64 entry.
class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Unbiased via rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Standard normal via Box-Muller. Consumes two uniforms and discards the
  /// sibling deviate so the generator stays stateless between calls.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const std::array<std::uint64_t, 4>& state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

/// Derives an independent stream from (seed, stream id, counters). Batch
/// sampling uses this so that resuming a run mid-epoch re-creates the exact
/// draw sequence from (epoch, step) alone.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream,
                      std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t sm = seed;
  std::uint64_t h = splitmix64(sm);
  sm ^= stream * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL;
  h ^= splitmix64(sm);
  sm ^= a * 0xd1b54a32d192ed03ULL + 0x452821e638d01377ULL;
  h ^= splitmix64(sm);
  sm ^= b * 0x8cb92ba72f3d8dd7ULL + 0x13198a2e03707344ULL;
  h ^= splitmix64(sm);
  return Rng(h);
}

}  // namespace ctcycle
