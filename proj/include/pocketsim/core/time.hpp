// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>

namespace pocket {

/// Durations and timestamps alike. Timestamps are offsets from the start of
/// a session on whichever clock produced them (device or virtual).
using Millis = std::chrono::milliseconds;

constexpr Millis ms(std::int64_t n) { return Millis{n}; }

/// Rounds `t` up to the next multiple of `period` (period > 0).
constexpr Millis ceil_to(Millis t, Millis period) {
  auto q = t.count() / period.count();
  if (q * period.count() < t.count()) ++q;
  return Millis{q * period.count()};
}

} // namespace pocket
