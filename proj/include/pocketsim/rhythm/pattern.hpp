// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/config.hpp"

namespace pocket::rhythm {

struct Note {
  Millis on;
  Millis gap;

  bool operator==(const Note&) const = default;
};

struct RhythmPattern {
  std::vector<Note> notes;
  std::uint64_t seed = 0;

  /// Time from the first vibration until input is expected.
  Millis length() const {
    Millis total{0};
    for (const auto& n : notes) total += n.on + n.gap;
    return total;
  }

  bool operator==(const RhythmPattern&) const = default;
};

namespace detail {

inline Millis draw_quantized(Rng& rng, Millis lo, Millis hi, Millis tick) {
  const auto first = ceil_to(lo, tick).count() / tick.count();
  const auto last = hi.count() / tick.count();
  return Millis{rng.uniform_int(first, last) * tick.count()};
}

} // namespace detail

/// Draws each note and gap uniformly from the tick multiples inside the
/// configured bounds. Identical (seed, config) give identical patterns.
inline RhythmPattern generate_pattern(std::uint64_t seed, const GameConfig& config) {
  config.validate();
  Rng rng(seed);
  RhythmPattern pattern;
  pattern.seed = seed;
  pattern.notes.reserve(config.notes_per_pattern);
  for (std::size_t i = 0; i < config.notes_per_pattern; ++i) {
    const Millis on = detail::draw_quantized(rng, config.note_min, config.note_max, config.tick);
    const Millis gap = detail::draw_quantized(rng, config.gap_min, config.gap_max, config.tick);
    pattern.notes.push_back({on, gap});
  }
  return pattern;
}

} // namespace pocket::rhythm
