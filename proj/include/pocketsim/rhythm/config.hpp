// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "pocketsim/core/error.hpp"
#include "pocketsim/core/time.hpp"

namespace pocket::rhythm {

/// Tunables of the rhythm-matching game. Defaults reproduce the robot.
struct GameConfig {
  std::size_t notes_per_pattern = 3;
  Millis note_min{200};
  Millis note_max{1000};
  Millis gap_min{200};
  Millis gap_max{800};
  /// Maximum relative deviation of a press from its note that still matches.
  double tolerance = 0.40;
  /// The vibration motor cannot render anything shorter.
  Millis actuator_floor{80};
  Millis success_buzz{3000};
  Millis session_idle_end{8000};
  /// Pattern durations are multiples of this.
  Millis tick{10};
  /// Pause between the triggering event and the first demonstrated note.
  Millis demo_lead{500};
  /// An inter-note gap longer than this multiple of the target gap abandons
  /// the attempt.
  double abandon_gap_factor = 3.0;

  bool operator==(const GameConfig&) const = default;

  void validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("game config: " + why); };
    if (notes_per_pattern < 1) fail("notes_per_pattern must be >= 1");
    if (!(tolerance > 0.0 && tolerance < 1.0)) fail("tolerance must lie in (0, 1)");
    if (tick <= Millis{0}) fail("tick must be positive");
    if (actuator_floor <= Millis{0}) fail("actuator_floor must be positive");
    if (note_min > note_max) fail("note bounds inverted");
    if (gap_min > gap_max) fail("gap bounds inverted");
    if (note_min < actuator_floor) fail("note_min below actuator floor");
    if (gap_min < actuator_floor) fail("gap_min below actuator floor");
    if (ceil_to(note_min, tick) > note_max) fail("no tick multiple inside note bounds");
    if (ceil_to(gap_min, tick) > gap_max) fail("no tick multiple inside gap bounds");
    if (success_buzz < actuator_floor) fail("success_buzz below actuator floor");
    if (session_idle_end <= Millis{0}) fail("session_idle_end must be positive");
    if (demo_lead < Millis{0}) fail("demo_lead must be non-negative");
    if (!(abandon_gap_factor >= 1.0)) fail("abandon_gap_factor must be >= 1");
  }
};

} // namespace pocket::rhythm
