// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/engine.hpp"
#include "pocketsim/sim/scenario.hpp"
#include "pocketsim/touch/plate.hpp"

namespace pocket::sim {

using touch::GraspEvent;
using touch::GraspKind;

/// Relative timing errors are drawn from this normal, redrawn when beyond.
inline constexpr double kTimingTruncation = 0.80;

inline double truncated_timing_error(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  for (;;) {
    const double e = rng.normal(0.0, sigma);
    if (std::abs(e) <= kTimingTruncation) return e;
  }
}

inline Millis round_to(double ms_value, Millis quantum) {
  const auto q = static_cast<double>(quantum.count());
  const auto n = std::max<std::int64_t>(1, std::llround(ms_value / q));
  return Millis{n * quantum.count()};
}

/// One attempt at a pattern: press durations are target * (1 + e) with
/// e ~ N(0, base_sigma * (1 - skill)) truncated at +-80%, gaps likewise.
/// Times are rounded to `quantum`.
inline std::vector<GraspEvent> synth_child_play(const ChildModel& model, const rhythm::RhythmPattern& pattern,
                                                Millis start, Rng& rng, Millis quantum = Millis{10}) {
  std::vector<GraspEvent> out;
  out.reserve(pattern.notes.size() * 2);
  const double sigma = model.sigma();
  Millis cursor = start;
  for (std::size_t i = 0; i < pattern.notes.size(); ++i) {
    const auto& note = pattern.notes[i];
    const Millis hold = round_to(static_cast<double>(note.on.count()) * (1.0 + truncated_timing_error(rng, sigma)), quantum);
    out.push_back({GraspKind::Press, cursor, {}});
    out.push_back({GraspKind::Release, cursor + hold, {}});
    cursor += hold;
    if (i + 1 < pattern.notes.size())
      cursor += round_to(static_cast<double>(note.gap.count()) * (1.0 + truncated_timing_error(rng, sigma)), quantum);
  }
  return out;
}

/// Switches the engine to Concealed once a number of attempts have ended
/// (failed or completed). Observes state changes only, so a replay that
/// feeds the same grasp events makes the same switch.
class ModePolicy {
public:
  explicit ModePolicy(std::optional<std::size_t> visual_attempts) : visual_attempts_(visual_attempts) {}

  /// Returns the attempts that ended in this step.
  std::size_t observe(const rhythm::GameState& s, std::span<const rhythm::Effect> effects) {
    std::size_t ended = 0;
    for (const auto& e : effects)
      if (e.kind == rhythm::EffectKind::PatternComplete) ++ended;
    if (s.phase != rhythm::Phase::Idle && s.pattern.seed == seen_seed_ && s.attempts_this_pattern > seen_attempts_)
      ended += s.attempts_this_pattern - seen_attempts_;
    seen_seed_ = s.pattern.seed;
    seen_attempts_ = s.attempts_this_pattern;
    ended_ += ended;
    return ended;
  }

  rhythm::Mode mode() const {
    if (!visual_attempts_) return rhythm::Mode::Visual;
    return ended_ >= *visual_attempts_ ? rhythm::Mode::Concealed : rhythm::Mode::Visual;
  }

  std::size_t attempts_ended() const { return ended_; }

private:
  std::optional<std::size_t> visual_attempts_;
  std::size_t ended_ = 0;
  std::uint64_t seen_seed_ = 0;
  std::size_t seen_attempts_ = 0;
};

/// Reactive synthetic player. It holds the robot while the robot is
/// demonstrating or celebrating, lets go when input is expected, plays one
/// attempt at a time and retries after a failure. Skill grows by
/// `learning_rate` after each completed game.
class SyntheticChild {
public:
  SyntheticChild(const LearnerSpec& spec, std::uint64_t seed, Millis quantum, Millis stop_at)
      : spec_(spec), model_(spec.model), rng_(seed), quantum_(quantum), stop_at_(stop_at) {
    hold_from(ceil_to(spec.start, quantum_));
  }

  /// Call after every engine step. `now` is the sensor clock.
  void observe(const rhythm::GameState& s, std::span<const rhythm::Effect> effects, Millis now) {
    if (stopped_) return;
    bool completed = false;
    bool session_ended = false;
    Millis event_at = now;
    for (const auto& e : effects) {
      if (e.kind == rhythm::EffectKind::PatternComplete) {
        completed = true;
        event_at = e.at;
        ++games_;
        model_.skill = std::min(1.0, model_.skill + model_.learning_rate);
      } else if (e.kind == rhythm::EffectKind::SessionEnd) {
        session_ended = true;
        event_at = e.at;
      }
    }

    const bool same_pattern = s.pattern.seed == seen_seed_;
    const bool failed = !completed && s.phase == rhythm::Phase::AwaitingInput && same_pattern &&
                        s.attempts_this_pattern > seen_attempts_;
    const bool input_opened = s.phase == rhythm::Phase::AwaitingInput &&
                              (!seen_entry_ || *seen_entry_ != s.phase_entered);
    seen_seed_ = s.pattern.seed;
    seen_attempts_ = s.attempts_this_pattern;
    if (s.phase == rhythm::Phase::AwaitingInput) seen_entry_ = s.phase_entered;

    if (now >= stop_at_ || (spec_.max_games > 0 && games_ >= spec_.max_games)) {
      stop(now);
      return;
    }

    if (completed || session_ended) {
      cancel_after(now);
      hold_from(next_slot(event_at + reaction(), now));
      return;
    }
    if (input_opened) {
      cancel_after(now);
      Millis start = next_slot(s.phase_entered + reaction(), now);
      if (open_hold()) {
        close_hold(start);
        start = start + reaction();
      }
      plan_attempt(s.pattern, start);
      return;
    }
    if (failed) {
      Millis busy = cancel_after(now);
      plan_attempt(s.pattern, next_slot(std::max(busy, now) + reaction(), now));
    }
  }

  bool touching(Millis t) const {
    for (const auto& iv : plan_)
      if (iv.start <= t && t < iv.end) return true;
    return false;
  }

  /// First time after `t` at which touching() may change.
  std::optional<Millis> next_change_after(Millis t) const {
    std::optional<Millis> best;
    for (const auto& iv : plan_) {
      for (Millis edge : {iv.start, iv.end})
        if (edge > t && edge != kOpen && (!best || edge < *best)) best = edge;
    }
    return best;
  }

  bool stopped() const { return stopped_; }
  std::size_t games() const { return games_; }
  const ChildModel& model() const { return model_; }

  /// Stops playing: future grasps are cancelled and any hold ends now.
  void stop(Millis now) {
    if (stopped_) return;
    stopped_ = true;
    cancel_after(now);
    for (auto& iv : plan_)
      if (iv.end == kOpen) iv.end = std::max(ceil_to(now, quantum_), iv.start + quantum_);
  }

private:
  static constexpr Millis kOpen{std::numeric_limits<std::int64_t>::max()};

  struct Interval {
    Millis start;
    Millis end;
  };

  Millis reaction() {
    // Around the mean, +-50%, on the quantum grid.
    const double jitter = std::clamp(rng_.normal(0.0, 0.25), -0.5, 0.5);
    return round_to(static_cast<double>(model_.reaction.count()) * (1.0 + jitter), quantum_);
  }

  Millis next_slot(Millis wanted, Millis now) const {
    return ceil_to(std::max(wanted, now + quantum_), quantum_);
  }

  bool open_hold() const { return !plan_.empty() && plan_.back().end == kOpen; }
  void close_hold(Millis at) { plan_.back().end = std::max(at, plan_.back().start + quantum_); }

  void hold_from(Millis at) {
    prune();
    plan_.push_back({at, kOpen});
  }

  /// Drops intervals that have not started by `now`; returns when the
  /// child is free again.
  Millis cancel_after(Millis now) {
    std::erase_if(plan_, [&](const Interval& iv) { return iv.start > now; });
    Millis busy = now;
    for (const auto& iv : plan_)
      if (iv.end != kOpen && iv.end > busy) busy = iv.end;
    prune();
    return busy;
  }

  void prune() {
    // Keep history short; intervals that ended long ago no longer matter.
    if (plan_.size() > 64) plan_.erase(plan_.begin(), plan_.end() - 16);
  }

  void plan_attempt(const rhythm::RhythmPattern& pattern, Millis start) {
    auto events = synth_child_play(model_, pattern, start, rng_, quantum_);
    for (std::size_t i = 0; i + 1 < events.size(); i += 2) plan_.push_back({events[i].ts, events[i + 1].ts});
  }

  LearnerSpec spec_;
  ChildModel model_;
  Rng rng_;
  Millis quantum_;
  Millis stop_at_;
  std::vector<Interval> plan_;
  std::size_t games_ = 0;
  bool stopped_ = false;
  std::uint64_t seen_seed_ = 0;
  std::size_t seen_attempts_ = 0;
  std::optional<Millis> seen_entry_;
};

} // namespace pocket::sim
