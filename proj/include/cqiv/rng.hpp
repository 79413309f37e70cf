#pragma once

#include <cstdint>
#include <random>

namespace cqiv {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the child stream `index` under `master`. Streams depend only on
/// the pair, so work items may run in any order or on any thread.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng child_rng(std::uint64_t master, std::uint64_t index) {
  return Rng(child_seed(master, index));
}

}  // namespace cqiv
