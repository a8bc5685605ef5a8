#pragma once

#include <cstdint>
#include <random>

namespace pacr::seeding {

/// SplitMix64 mixing step. All randomness in the project flows from one
/// master seed through this function; see stream_seed() for the scheme.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream identifiers for deriving independent seeds from a master seed.
enum Stream : std::uint64_t {
  kStreamPolicyInit = 1,
  kStreamRollout = 2,
  kStreamBootstrap = 3,
  kStreamSuite = 4,
  kStreamPropositionDraws = 5,
  kStreamLogSampling = 6,
};

/// Documented splitting scheme: stream_seed(master, tag) =
/// splitmix64(master ^ splitmix64(tag)). Sub-streams (e.g. per-rollout
/// seeds) are drawn sequentially from an mt19937_64 seeded with the
/// stream seed.
inline constexpr std::uint64_t stream_seed(std::uint64_t master,
                                           std::uint64_t tag) {
  return splitmix64(master ^ splitmix64(tag));
}

/// Canonical uniform in [0,1) with 53 random bits. Used instead of
/// std::uniform_real_distribution / std::discrete_distribution, whose
/// output sequences are implementation-defined; rollouts must replay
/// bit-identically across platforms.
inline double canonical_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace pacr::seeding
