#pragma once

#include <cstdint>
#include <random>

namespace vcboot {

// splitmix64 step; used to derive well-separated substream seeds from a
// master seed so replicate k always sees the same draws no matter how work
// is scheduled.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic substream seed for (seed, a) and (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
  std::uint64_t s = seed + 0x9e3779b97f4a7c15ull * (a + 1);
  std::uint64_t z = splitmix64(s);
  return z ^ splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace vcboot
