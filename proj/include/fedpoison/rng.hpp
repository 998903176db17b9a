#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedpoison {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a parent seed and a path of tags.
/// Every random decision in the simulator is keyed this way, so results do not
/// depend on the order in which work is scheduled.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto tag : path) h = mix64(h ^ mix64(tag + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(seed, path));
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTrain = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kSelectHonest = 5;
inline constexpr std::uint64_t kSelectMalicious = 6;
inline constexpr std::uint64_t kAttack = 7;
inline constexpr std::uint64_t kPoison = 8;
inline constexpr std::uint64_t kPartition = 9;
inline constexpr std::uint64_t kSplit = 10;
inline constexpr std::uint64_t kSmote = 11;
inline constexpr std::uint64_t kSynthetic = 12;
}  // namespace stream

}  // namespace fedpoison
