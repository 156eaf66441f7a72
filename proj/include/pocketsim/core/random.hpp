// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>

namespace pocket {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for an independent named stream ("pattern", "noise", "learner", ...).
/// Streams never share draws, so perturbing one leaves the others intact.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t s = master ^ fnv1a64(stream);
  return splitmix64(s);
}

/// Deterministic sequence of seeds; one per generated pattern.
class SeedStream {
public:
  explicit SeedStream(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() { return splitmix64(state_); }

  bool operator==(const SeedStream&) const = default;

private:
  std::uint64_t state_;
};

/// mt19937_64 with hand-rolled distributions so that draws are identical on
/// every standard library (std:: distributions are implementation-defined).
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform integer in [lo, hi], unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(bits());
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t x;
    do {
      x = bits();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Exponential with the given rate (events per unit).
  double exponential(double rate) {
    double u;
    do {
      u = uniform01();
    } while (u <= 0.0);
    return -std::log(u) / rate;
  }

private:
  std::mt19937_64 engine_;
};

} // namespace pocket
