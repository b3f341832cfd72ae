#include "layoutret/rng.hpp"

#include <cmath>
#include <numbers>

namespace layoutret::inline LAYOUTRET_ABI {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(mix64(seed + kGolden) ^ (stream * kGolden + 0x632BE59BD9B4E019ull))) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t i = counter_++;
  return mix64(mix64(key_ + (i + 1) * kGolden) ^ key_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  // Lemire's multiply-shift; bias is negligible for the sizes used here.
  __extension__ using u128 = unsigned __int128;
  const u128 m = static_cast<u128>(next_u64()) * n;
  return static_cast<std::size_t>(m >> 64);
}

Rng Rng::split(std::uint64_t stream_id) const {
  return Rng(mix64(key_ ^ mix64(stream_id + kGolden)), 0, 0);
}

}  // namespace layoutret::inline LAYOUTRET_ABI
