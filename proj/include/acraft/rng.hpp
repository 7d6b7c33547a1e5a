#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace acraft {

/// Deterministic, platform-independent random source (xoshiro256**).
///
/// Standard-library distributions are implementation-defined, so every
/// draw used by the framework goes through this type to keep runs
/// reproducible bit-for-bit across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a master seed with a sequence of integer tags into an independent
/// substream seed. Used for (generation, candidate, purpose) keyed streams.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags);

/// 64-bit FNV-1a, used for purpose tags and content fingerprints.
std::uint64_t fnv1a(std::string_view text);

}  // namespace acraft
