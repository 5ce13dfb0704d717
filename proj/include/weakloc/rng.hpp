#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace weakloc {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for a numbered sub-stream of a root seed. Streams derived this way are
// independent of iteration order, so per-sample work can move between threads
// without changing results.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 0x632be59bd9b4e019ull));
}

// Uniform in [0,1) from the top 53 bits; avoids std::uniform_real_distribution
// so the stream is identical across standard-library implementations.
inline double uniform01(Rng& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller, no second-value cache.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace weakloc
