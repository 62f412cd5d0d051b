#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace spbuf {

// Counter-style seeding: every pulse (and every detection chunk) gets its own
// stream derived from (master seed, domain, index), so results do not depend
// on the order or the thread in which work items are processed.

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// SplitMix64. Tiny state, free to seed; used for per-pulse streams.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

 private:
  std::uint64_t state_;
};

enum class StreamDomain : std::uint64_t {
  Pulse = 1,
  Splitter = 2,
  ClicksA = 3,
  ClicksB = 4,
};

inline constexpr std::uint64_t stream_key(std::uint64_t master_seed, StreamDomain domain,
                                          std::uint64_t index) {
  const auto d = static_cast<std::uint64_t>(domain);
  return mix64(mix64(master_seed ^ (d * 0xd1b54a32d192ed03ULL)) + index * 0x9e3779b97f4a7c15ULL);
}

using PulseRng = SplitMix64;
using ChunkRng = std::mt19937_64;

inline PulseRng pulse_stream(std::uint64_t master_seed, std::uint64_t pulse_index) {
  return PulseRng(stream_key(master_seed, StreamDomain::Pulse, pulse_index));
}

inline ChunkRng chunk_stream(std::uint64_t master_seed, StreamDomain domain, std::uint64_t chunk) {
  return ChunkRng(stream_key(master_seed, domain, chunk));
}

/// Uniform double in [0, 1) with 53 random bits.
template <class Engine>
inline double uniform01(Engine& rng) {
  static_assert(Engine::max() == std::numeric_limits<std::uint64_t>::max());
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Bernoulli trial; probabilities 0 and 1 consume no randomness.
template <class Engine>
inline bool bernoulli(Engine& rng, double p) {
  if (p >= 1.0) return true;
  if (p <= 0.0) return false;
  return uniform01(rng) < p;
}

}  // namespace spbuf
