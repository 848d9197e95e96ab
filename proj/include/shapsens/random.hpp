#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shapsens {

using Rng = std::mt19937_64;

// Derives an independent seed for a named consumer ("fold-3/model",
// "fold-3/bo", ...) from one root seed. Adding a new stream name never
// changes the seeds handed to existing names.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ull;
  }
  // splitmix64 finalizer over the combined value
  std::uint64_t z = root ^ (h + 0x9e3779b97f4a7c15ull + (root << 6) + (root >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

}  // namespace shapsens
