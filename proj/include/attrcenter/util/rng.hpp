#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace attrcenter {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream seed: the same (seed, keys...) always yields the same
/// stream regardless of what else was drawn, so samples can be generated in
/// any order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return std::mt19937_64(derive_seed(seed, keys));
}

// Stream tags, so that differently purposed streams never collide.
namespace stream {
inline constexpr std::uint64_t kGeometry = 1;
inline constexpr std::uint64_t kSketchJitter = 2;
inline constexpr std::uint64_t kPhotoNoise = 3;
inline constexpr std::uint64_t kCombos = 4;
inline constexpr std::uint64_t kAugment = 5;
inline constexpr std::uint64_t kBatch = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kSplit = 8;
inline constexpr std::uint64_t kAttrNoise = 9;
}  // namespace stream

}  // namespace attrcenter
