#pragma once

#include <cstdint>
#include <random>

namespace fictplay {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of sub-stream `stream` of a run seeded with `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

/// Named sub-streams of a run seed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kBatches = 2;
inline constexpr std::uint64_t kAttack = 3;
inline constexpr std::uint64_t kPgd = 4;
inline constexpr std::uint64_t kPlacement = 5;
inline constexpr std::uint64_t kEval = 6;
inline constexpr std::uint64_t kData = 7;
}  // namespace stream

}  // namespace fictplay
