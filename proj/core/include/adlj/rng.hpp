#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace adlj {

/// SplitMix64 finalizer; used to fold keys into independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for the stream identified by `keys`, e.g. (global_seed, epoch, scene).
/// Pure function of the key tuple, so reordering work never changes a stream.
std::uint64_t stream_seed(std::initializer_list<std::uint64_t> keys);

/// Deterministic generator with distribution code owned here rather than by
/// the standard library, so sampled values are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::initializer_list<std::uint64_t> keys) : engine_(stream_seed(keys)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace adlj
