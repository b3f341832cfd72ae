#pragma once

#include <cstddef>
#include <cstdint>

#include "layoutret/config.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

/// Counter-based, splittable random generator.
///
/// The i-th draw of a stream is a pure function of (key, i), so a stream can
/// be forked into independent child streams with split() without touching the
/// parent's sequence. All randomness in the library flows from one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; does not advance this stream.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace layoutret::inline LAYOUTRET_ABI
