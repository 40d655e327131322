#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace heis {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t tag_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based stream keyed by (seed, tag, index). Two streams with
/// different keys are statistically independent; a stream never depends on
/// which thread draws from it.
class Stream {
 public:
  constexpr Stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) noexcept
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ (index * 0xd1342543de82ef95ULL))) {}
  constexpr Stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) noexcept
      : Stream(seed, tag_hash(tag), index) {}

  constexpr std::uint64_t next_u64() noexcept { return splitmix64(key_ + 0x632be59bd9b4e019ULL * ++counter_); }

  /// Uniform in [0, 1).
  constexpr double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  constexpr double uniform(double a, double b) noexcept { return a + (b - a) * uniform(); }

  /// Uniform in [0, n).
  constexpr std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// A child stream for nested loops.
  constexpr Stream child(std::uint64_t index) const noexcept { return Stream(key_, 0x5eedULL, index); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace heis
