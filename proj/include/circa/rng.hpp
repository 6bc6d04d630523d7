#pragma once

#include <cstdint>

namespace circa {

/// splitmix64 stream. Cheap to construct, so we use one per derived index
/// (activation, shard, gate) instead of keeping long-lived engine state.
/// Output sequence is fixed by the standard constants; results are identical
/// across platforms and thread schedules.
struct SplitMix64 {
  std::uint64_t state = 0;

  SplitMix64() = default;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tweak) {
  SplitMix64 sm(seed ^ (tweak * 0xd6e8feb86659fd93ULL));
  return sm.next();
}

/// Stream derived from (seed, a, b); distinct (a, b) give independent streams.
inline SplitMix64 derived_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return SplitMix64(mix_seed(mix_seed(seed, a ^ 0x517cc1b727220a95ULL), b));
}

/// Uniform draw from [0, bound) by rejection. bound must be nonzero.
template <class Rng>
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  // rejection zone keeps the draw unbiased
  const std::uint64_t zone = bound * ((~std::uint64_t{0}) / bound);
  for (;;) {
    std::uint64_t r = rng.next();
    if (r < zone) return r % bound;
  }
}

}  // namespace circa
