#pragma once

#include <cstdint>
#include <random>

namespace ia {

/// Independent random streams. Every consumer of randomness derives its own
/// seed from the run seed, a stream tag and an index.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  proposals = 3,
  mask = 4,
  subset = 5,
  data = 6,
  eval = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  return splitmix64(h ^ (b + 0x632be59bd9b4e019ull));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0,
                                std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(seed, stream, a, b));
}

}  // namespace ia
