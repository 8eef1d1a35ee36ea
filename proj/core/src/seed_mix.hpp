#pragma once

// Internal deterministic seed derivation shared by corpus generation and
// the training loop's stateless batch shuffling.

#include <cstdint>

namespace fpf::seedmix {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag,
                              std::uint64_t id) {
  return splitmix64(splitmix64(seed ^ tag) + id);
}

}  // namespace fpf::seedmix
