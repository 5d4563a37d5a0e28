#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kdream {

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, component, index). Order of creation does not
/// matter, so parallel workers can derive their own streams.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  const std::uint64_t h = splitmix64(seed ^ fnv1a64(component));
  return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng derive_stream(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  return Rng(stream_seed(seed, component, index));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace kdream
