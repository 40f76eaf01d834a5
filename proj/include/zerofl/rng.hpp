#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace zerofl {

using Rng = std::mt19937_64;

// Stream tags keep independent consumers of one experiment seed apart.
enum class Stream : std::uint64_t {
  Init = 1,
  Data = 2,
  Partition = 3,
  Validation = 4,
  Sampling = 5,
  LocalTraining = 6,
  Split = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Mixes a seed with a stream tag and any number of coordinates (round, client id, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t c : coords) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

}  // namespace zerofl
