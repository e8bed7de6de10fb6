#pragma once

#include <cstdint>
#include <random>

namespace just {

// Deterministic stream derivation: every consumer of randomness owns a
// generator keyed by (base seed, purpose tag, indices). Training can then
// resume at an arbitrary step and reproduce the unbroken run exactly.
enum class RngTag : std::uint64_t {
  kInit = 1,
  kEpoch = 2,
  kMaskStarts = 3,
  kMaskNoise = 4,
  kGumbel = 5,
  kNegatives = 6,
  kCorpus = 7,
  kGradCheck = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, RngTag tag,
                              std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, RngTag tag,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(mix_seed(seed, tag, a, b));
}

}  // namespace just
