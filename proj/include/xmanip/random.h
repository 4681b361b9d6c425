#ifndef XMANIP_RANDOM_H_
#define XMANIP_RANDOM_H_

#include <cstdint>
#include <random>

namespace xmanip {

using Rng = std::mt19937_64;

// Stream seeds are derived from one experiment seed with one splitmix64
// round over (seed, stream). Each consumer draws from its own stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable stream indices.
namespace stream {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kAugment = 2;
inline constexpr std::uint64_t kLime = 3;
inline constexpr std::uint64_t kDiscriminator = 4;
inline constexpr std::uint64_t kForest = 5;
inline constexpr std::uint64_t kModelInit = 6;
inline constexpr std::uint64_t kAttack = 7;
inline constexpr std::uint64_t kCounterfactual = 8;
inline constexpr std::uint64_t kSynthetic = 9;
inline constexpr std::uint64_t kPca = 10;
}  // namespace stream

}  // namespace xmanip

#endif  // XMANIP_RANDOM_H_
