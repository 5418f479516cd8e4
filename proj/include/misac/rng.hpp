// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams with platform-independent transforms.

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace misac {

/// SplitMix64 finalizer; derives independent substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix_seed(seed)) {}

  /// Substream for item `index` of a stream seeded with `base`.
  static Rng substream(std::uint64_t base, std::uint64_t index) { return Rng(base ^ mix_seed(index + 1)); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive, unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  /// Normal(0, sigma) resampled until |x| <= 2 sigma.
  double truncated_normal(double sigma);
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace misac
