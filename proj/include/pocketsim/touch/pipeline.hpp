// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

#include "pocketsim/touch/plate.hpp"

namespace pocket::touch {

struct PipelineConfig {
  std::array<double, kPlateCount> thresholds{50.0, 50.0, 50.0, 50.0, 50.0};
  double hysteresis = 0.0;
  Millis sample_period{100};
  /// Fused presses shorter than debounce_periods * sample_period are
  /// absorbed together with their release.
  bool debounce = true;
  int debounce_periods = 2;

  Millis debounce_window() const { return debounce ? sample_period * debounce_periods : Millis{0}; }
};

struct PipelineOutput {
  /// Per-plate Touched/Released transitions (NotChanged readings omitted).
  std::vector<PlateState> transitions;
  std::vector<GraspEvent> grasps;
};

/// Samples in, plate transitions and debounced grasp events out. A fold
/// over the sample stream: identical inputs give identical outputs.
class TouchPipeline {
public:
  explicit TouchPipeline(PipelineConfig config = {}) : config_(config), plates_(initial_plates()) {
    for (double t : config_.thresholds)
      if (!(t > 0.0 && t < 100.0)) throw ConfigError("threshold must lie in (0, 100)");
    if (config_.sample_period <= Millis{0}) throw ConfigError("sample period must be positive");
    if (config_.debounce_periods < 1) throw ConfigError("debounce_periods must be >= 1");
  }

  void push(const CapacitanceSample& sample, PipelineOutput& out) {
    if (sample.plate >= kPlateCount) throw RoutingError("sample for unknown plate");
    confirm_pending(sample.ts, out);

    const PlateArray before = plates_;
    plates_[sample.plate] = classify(before[sample.plate], sample,
                                     config_.thresholds[sample.plate], config_.hysteresis);
    if (plates_[sample.plate].reading != PlateReading::NotChanged)
      out.transitions.push_back(plates_[sample.plate]);

    // Late samples must not move the fused stream backwards.
    const Millis ts = std::max(sample.ts, last_fused_);
    if (auto ev = fuse(before, plates_, ts)) {
      last_fused_ = ts;
      on_raw_grasp(*ev, out);
    }
  }

  PipelineOutput push(const CapacitanceSample& sample) {
    PipelineOutput out;
    push(sample, out);
    return out;
  }

  /// Lets time pass without samples; confirms a pending press whose
  /// debounce window has elapsed.
  void advance(Millis now, PipelineOutput& out) { confirm_pending(now, out); }

  /// Every grasp event emitted in future carries ts >= this value.
  Millis safe_horizon(Millis now) const { return pending_ ? std::min(now, pending_->ts) : now; }

  /// When a pending press would be confirmed, if one is pending.
  std::optional<Millis> pending_confirmation() const {
    if (!pending_) return std::nullopt;
    return pending_->ts + config_.debounce_window();
  }

  const PlateArray& plates() const { return plates_; }
  bool grasped() const { return touched_mask(plates_).any(); }
  const PipelineConfig& config() const { return config_; }

  /// Raw presses swallowed by the debouncer.
  std::size_t absorbed() const { return absorbed_; }

private:
  void on_raw_grasp(const GraspEvent& ev, PipelineOutput& out) {
    if (!config_.debounce) {
      out.grasps.push_back(ev);
      return;
    }
    if (ev.kind == GraspKind::Press) {
      pending_ = ev;
      return;
    }
    if (pending_) {
      if (ev.ts - pending_->ts < config_.debounce_window()) {
        pending_.reset();
        ++absorbed_;
        return;
      }
      out.grasps.push_back(*pending_);
      pending_.reset();
    }
    out.grasps.push_back(ev);
  }

  void confirm_pending(Millis now, PipelineOutput& out) {
    if (pending_ && now - pending_->ts >= config_.debounce_window() && grasped()) {
      out.grasps.push_back(*pending_);
      pending_.reset();
    }
  }

  PipelineConfig config_;
  PlateArray plates_;
  std::optional<GraspEvent> pending_;
  Millis last_fused_{0};
  std::size_t absorbed_ = 0;
};

} // namespace pocket::touch
