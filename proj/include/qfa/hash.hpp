#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace qfa {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kMixConstant1 = 0xBF58476D1CE4E5B9ULL;
inline constexpr std::uint64_t kMixConstant2 = 0x94D049BB133111EBULL;

/// First output of a splitmix64 generator whose state is `x`.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  std::uint64_t z = x + kGoldenGamma;
  z = (z ^ (z >> 30)) * kMixConstant1;
  z = (z ^ (z >> 27)) * kMixConstant2;
  return z ^ (z >> 31);
}

/// Top 53 bits of `r` mapped to [0, 1).
constexpr double to_unit_interval(std::uint64_t r) noexcept {
  return static_cast<double>(r >> 11) * 0x1.0p-53;
}

/// Sequential splitmix64 stream. Satisfies UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr result_type operator()() noexcept {
    const std::uint64_t out = splitmix64(state_);
    state_ += kGoldenGamma;
    return out;
  }

  /// Uniform index in [0, n) by multiply-shift; no modulo, no rejection.
  constexpr std::size_t below(std::size_t n) noexcept {
    const auto wide = static_cast<unsigned __int128>((*this)()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  double uniform() noexcept { return to_unit_interval((*this)()); }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a, incremental.
class Fnv1a64 {
 public:
  Fnv1a64& update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001B3ULL;
    }
    return *this;
  }

  Fnv1a64& update_byte(unsigned char c) noexcept {
    hash_ ^= c;
    hash_ *= 0x100000001B3ULL;
    return *this;
  }

  std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace qfa
