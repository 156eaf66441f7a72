// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "pocketsim/core/error.hpp"
#include "pocketsim/core/time.hpp"

namespace pocket::touch {

inline constexpr std::size_t kPlateCount = 5;

using PlateMask = std::bitset<kPlateCount>;

struct CapacitanceSample {
  std::size_t plate = 0;
  /// 0..100; a touching finger pulls the value down.
  double value = 0.0;
  Millis ts{0};
};

enum class PlateReading { Touched, Released, NotChanged };

struct PlateState {
  std::size_t plate = 0;
  /// What the latest sample caused: a transition, or NotChanged.
  PlateReading reading = PlateReading::NotChanged;
  /// Current level of the plate.
  bool touched = false;
  /// Timestamp of the last transition.
  Millis since{0};

  bool operator==(const PlateState&) const = default;
};

using PlateArray = std::array<PlateState, kPlateCount>;

inline PlateArray initial_plates() {
  PlateArray plates{};
  for (std::size_t i = 0; i < kPlateCount; ++i) plates[i].plate = i;
  return plates;
}

/// Classifies one sample against a plate's previous state. A value strictly
/// below the threshold touches the plate; release needs the value to climb
/// back to threshold + hysteresis.
inline PlateState classify(const PlateState& prev, const CapacitanceSample& sample,
                           double threshold, double hysteresis = 0.0) {
  if (sample.plate != prev.plate)
    throw RoutingError("sample for plate " + std::to_string(sample.plate) +
                       " routed to plate " + std::to_string(prev.plate));
  if (!(threshold > 0.0 && threshold < 100.0))
    throw ConfigError("threshold must lie in (0, 100)");
  if (!(sample.value >= 0.0 && sample.value <= 100.0))
    throw DomainError("capacitance value outside [0, 100]");

  PlateState next = prev;
  next.reading = PlateReading::NotChanged;
  if (!prev.touched && sample.value < threshold) {
    next.reading = PlateReading::Touched;
    next.touched = true;
    next.since = sample.ts;
  } else if (prev.touched && sample.value >= threshold + hysteresis) {
    next.reading = PlateReading::Released;
    next.touched = false;
    next.since = sample.ts;
  }
  return next;
}

enum class GraspKind { Press, Release };

struct GraspEvent {
  GraspKind kind = GraspKind::Press;
  Millis ts{0};
  PlateMask active_plates;

  bool operator==(const GraspEvent&) const = default;
};

inline PlateMask touched_mask(std::span<const PlateState, kPlateCount> plates) {
  PlateMask mask;
  for (std::size_t i = 0; i < kPlateCount; ++i) mask[i] = plates[i].touched;
  return mask;
}

/// Device-level view: Press when the touched-plate count leaves zero,
/// Release when it returns to zero.
inline std::optional<GraspEvent> fuse(std::span<const PlateState, kPlateCount> before,
                                      std::span<const PlateState, kPlateCount> after, Millis ts) {
  const bool was = touched_mask(before).any();
  const PlateMask now = touched_mask(after);
  if (!was && now.any()) return GraspEvent{GraspKind::Press, ts, now};
  if (was && now.none()) return GraspEvent{GraspKind::Release, ts, now};
  return std::nullopt;
}

inline std::string_view to_string(GraspKind k) { return k == GraspKind::Press ? "Press" : "Release"; }

} // namespace pocket::touch
