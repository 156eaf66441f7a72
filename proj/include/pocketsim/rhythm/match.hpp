// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "pocketsim/core/error.hpp"
#include "pocketsim/core/time.hpp"

namespace pocket::rhythm {

struct NoteMatch {
  std::size_t note_index = 0;
  Millis press{0};
  Millis target{0};
  double rel_error = 0.0;
  bool matched = false;

  bool operator==(const NoteMatch&) const = default;
};

/// Scores one press against its target note. The tolerance boundary is
/// inclusive: rel_error == tolerance matches.
inline NoteMatch match_note(Millis press, Millis target, double tolerance,
                            std::size_t note_index = 0) {
  if (press <= Millis{0} || target <= Millis{0})
    throw DomainError("match_note: durations must be positive");
  NoteMatch m;
  m.note_index = note_index;
  m.press = press;
  m.target = target;
  m.rel_error = static_cast<double>(std::llabs(press.count() - target.count())) /
                static_cast<double>(target.count());
  m.matched = m.rel_error <= tolerance;
  return m;
}

/// Mean relative timing error of a completed pattern, in percent. Lower is
/// better.
inline double attempt_precision(std::span<const NoteMatch> matches,
                                std::size_t notes_per_pattern) {
  if (matches.size() != notes_per_pattern || matches.empty())
    throw DomainError("attempt_precision: expected " + std::to_string(notes_per_pattern) +
                      " matches, got " + std::to_string(matches.size()));
  double sum = 0.0;
  for (const auto& m : matches) {
    if (!m.matched) throw DomainError("attempt_precision: unmatched note in set");
    sum += m.rel_error;
  }
  return sum / static_cast<double>(matches.size()) * 100.0;
}

} // namespace pocket::rhythm
