#ifndef SEMALIGN_RNG_HPP_
#define SEMALIGN_RNG_HPP_

#include <cstdint>
#include <random>

namespace semalign {

using Rng = std::mt19937_64;

// splitmix64 finalizer; mixes a global seed with a stream index so that
// item #n of any stream depends only on (seed, n).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace semalign

#endif  // SEMALIGN_RNG_HPP_
