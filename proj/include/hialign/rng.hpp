// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace hialign {

std::uint64_t splitmix64(std::uint64_t x);
// FNV-1a, 64 bit. Stable across platforms and runs.
std::uint64_t stable_hash(std::string_view s);

// Counter-based generator: the n-th draw of a stream is splitmix64(key + n * gamma).
// Streams are cheap to derive, so every stochastic consumer gets its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(splitmix64(seed)) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform integer in [lo, hi] (inclusive).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);
  bool bernoulli(double p) { return uniform() < p; }

  Rng split(std::uint64_t stream) const;
  Rng split(std::string_view name) const { return split(stable_hash(name)); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace hialign
