#pragma once

#include <cstdint>
#include <random>

namespace rislab {

/** splitmix64 scramble; decorrelates nearby seed/index pairs. */
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/** Deterministic per-item substream seed for parallel generation. */
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed + 0x9E3779B97F4A7C15ull * (index + 1));
}

/**
 * Fresh-distribution draws: each call consumes a fixed number of engine
 * outputs regardless of any distribution-internal caching, which keeps the
 * draw sequence stable across call sites.
 */
inline double draw_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

inline double draw_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

}  // namespace rislab
