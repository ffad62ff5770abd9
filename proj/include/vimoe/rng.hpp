// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based deterministic random numbers. Every draw is a pure function
// of a 64-bit key, so datasets and parameter initializations are reproducible
// across platforms and independent of evaluation order.

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vimoe::rng {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer.
inline constexpr std::uint64_t mix(std::uint64_t z) {
  z += kGamma;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t combine(std::uint64_t key, std::uint64_t word) {
  return mix(key ^ (word + kGamma));
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Uniform in [0, 1).
inline double uniform01(std::uint64_t key) {
  return static_cast<double>(mix(key) >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1], safe as a log() argument.
inline double uniform01_open(std::uint64_t key) {
  return (static_cast<double>(mix(key) >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two decorrelated sub-keys.
inline double normal(std::uint64_t key) {
  const double u1 = uniform01_open(combine(key, 0x6A09E667F3BCC908ULL));
  const double u2 = uniform01(combine(key, 0xBB67AE8584CAA73BULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Sequential draws from a keyed stream. Used where a natural per-draw counter
// does not exist (shuffles, parameter buffers).
class Stream {
 public:
  explicit Stream(std::uint64_t key) : state_(mix(key)) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
  // Uniform integer in [lo, hi] inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    return lo + next_u64() % (hi - lo + 1);
  }

 private:
  std::uint64_t state_;
};

}  // namespace vimoe::rng
