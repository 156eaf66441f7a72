// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pocketsim/touch/plate.hpp"

namespace pocket::touch {

struct TouchDurations {
  std::vector<Millis> closed;
  /// Start of a trailing press that was never released.
  std::optional<Millis> open_press;

  bool operator==(const TouchDurations&) const = default;
};

inline TouchDurations touch_durations(std::span<const GraspEvent> events) {
  TouchDurations out;
  for (const auto& e : events) {
    if (e.kind == GraspKind::Press) {
      if (out.open_press) throw ProtocolError("two presses without a release");
      out.open_press = e.ts;
    } else {
      if (!out.open_press) throw ProtocolError("release without a preceding press");
      out.closed.push_back(e.ts - *out.open_press);
      out.open_press.reset();
    }
  }
  return out;
}

} // namespace pocket::touch
