// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "pocketsim/core/error.hpp"
#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/config.hpp"
#include "pocketsim/rhythm/match.hpp"
#include "pocketsim/rhythm/pattern.hpp"

namespace pocket::rhythm {

enum class Phase { Idle, Demonstrating, AwaitingInput, SuccessBuzz };
enum class Star { Black, Gold };
enum class Face { Neutral, Smiling };
/// Presentation mode. The engine only tags effects with it; clients decide
/// what to render.
enum class Mode { Visual, Blindfolded, Concealed };
enum class Input { GraspPress, GraspRelease, TimerTick };

enum class EffectKind { VibrateOn, VibrateOff, StarUpdate, FaceUpdate, PatternComplete, SessionEnd };

struct StarPayload {
  std::size_t index = 0;
  Star star = Star::Black;
  bool operator==(const StarPayload&) const = default;
};

struct FacePayload {
  Face face = Face::Neutral;
  bool operator==(const FacePayload&) const = default;
};

struct CompletionPayload {
  std::size_t pattern_no = 0;
  std::size_t attempts = 0;
  double precision_pct = 0.0;
  bool operator==(const CompletionPayload&) const = default;
};

using EffectPayload = std::variant<std::monostate, StarPayload, FacePayload, CompletionPayload>;

struct Effect {
  EffectKind kind;
  Millis at{0};
  Mode mode = Mode::Visual;
  EffectPayload payload;

  bool operator==(const Effect&) const = default;
};

struct VibrationSegment {
  Millis on{0};
  Millis off{0};
  bool operator==(const VibrationSegment&) const = default;
};

struct GameState {
  Phase phase = Phase::Idle;
  RhythmPattern pattern;
  std::size_t next_note = 0;
  std::vector<Star> stars;
  std::size_t attempts_this_pattern = 0;
  std::size_t patterns_completed = 0;
  Millis last_release{0};
  Mode mode = Mode::Visual;
  Face face = Face::Neutral;

  /// Time of the most recent step; inputs must not go backwards.
  std::optional<Millis> clock;
  Millis phase_entered{0};
  /// End of the demonstration or of the success buzz.
  Millis phase_deadline{0};
  bool grasped = false;
  Millis press_started{0};
  /// The current press began while input was awaited and will be scored.
  bool press_scored = false;
  std::vector<NoteMatch> current_matches;
  /// Scheduled vibration not yet fully emitted, in time order.
  std::deque<VibrationSegment> vibration;
  bool vibrating = false;
  /// No new vibration may start before this.
  Millis vibration_busy_until{0};

  bool operator==(const GameState&) const = default;
};

struct StepResult {
  GameState state;
  std::vector<Effect> effects;
};

namespace detail {

class Transition {
public:
  Transition(GameState state, const GameConfig& config, SeedStream& seeds)
      : s_(std::move(state)), cfg_(config), seeds_(seeds) {}

  StepResult finish() && { return {std::move(s_), std::move(out_)}; }

  /// Fires every timer due at or before `now`, in time order.
  void advance(Millis now) {
    for (;;) {
      auto due = earliest_timer();
      if (!due || due->at > now) return;
      fire(*due);
    }
  }

  void press(Millis now) {
    if (s_.grasped) throw ProtocolError("grasp press while already pressed");
    s_.grasped = true;
    s_.press_started = now;
    s_.press_scored = s_.phase == Phase::AwaitingInput;
    if (s_.phase == Phase::Idle) {
      s_.patterns_completed = 0;
      start_demonstration(now);
    }
  }

  void release(Millis now) {
    if (!s_.grasped) throw ProtocolError("grasp release without press");
    s_.grasped = false;
    s_.last_release = now;
    const bool scored = s_.press_scored;
    s_.press_scored = false;
    if (s_.phase != Phase::AwaitingInput || !scored) return;

    const Millis held = now - s_.press_started;
    const std::size_t idx = s_.next_note;
    const Millis target = s_.pattern.notes[idx].on;
    if (held <= Millis{0}) {
      fail_attempt(now);
      return;
    }
    const NoteMatch m = match_note(held, target, cfg_.tolerance, idx);
    if (!m.matched) {
      fail_attempt(now);
      return;
    }
    s_.stars[idx] = Star::Gold;
    emit(EffectKind::StarUpdate, now, StarPayload{idx, Star::Gold});
    s_.current_matches.push_back(m);
    ++s_.next_note;
    if (s_.next_note == s_.pattern.notes.size()) complete(now);
  }

private:
  enum class Timer { VibrationEdge, PhaseDeadline, Abandon, Idle };
  struct Due {
    Timer timer;
    Millis at;
  };

  std::optional<Due> earliest_timer() const {
    std::optional<Due> best;
    auto consider = [&](Timer t, Millis at) {
      if (!best || at < best->at) best = Due{t, at};
    };
    if (!s_.vibration.empty())
      consider(Timer::VibrationEdge, s_.vibrating ? s_.vibration.front().off : s_.vibration.front().on);
    if (s_.phase == Phase::Demonstrating || s_.phase == Phase::SuccessBuzz)
      consider(Timer::PhaseDeadline, s_.phase_deadline);
    if (auto at = abandon_deadline()) consider(Timer::Abandon, *at);
    if (s_.phase != Phase::Idle && !s_.grasped)
      consider(Timer::Idle, s_.last_release + cfg_.session_idle_end);
    return best;
  }

  std::optional<Millis> abandon_deadline() const {
    if (s_.phase != Phase::AwaitingInput || s_.next_note == 0 || s_.grasped) return std::nullopt;
    const Millis gap = s_.pattern.notes[s_.next_note - 1].gap;
    const auto limit = std::llround(cfg_.abandon_gap_factor * static_cast<double>(gap.count()));
    return s_.last_release + Millis{limit};
  }

  void fire(const Due& due) {
    switch (due.timer) {
    case Timer::VibrationEdge:
      if (s_.vibrating) {
        emit(EffectKind::VibrateOff, due.at);
        s_.vibration.pop_front();
        s_.vibrating = false;
      } else {
        emit(EffectKind::VibrateOn, due.at);
        s_.vibrating = true;
      }
      break;
    case Timer::PhaseDeadline:
      if (s_.phase == Phase::Demonstrating) {
        s_.phase = Phase::AwaitingInput;
        s_.phase_entered = due.at;
        s_.next_note = 0;
      } else {
        start_demonstration(due.at);
      }
      break;
    case Timer::Abandon:
      fail_attempt(due.at);
      break;
    case Timer::Idle:
      end_session(due.at);
      break;
    }
  }

  void emit(EffectKind kind, Millis at, EffectPayload payload = {}) {
    out_.push_back(Effect{kind, at, s_.mode, std::move(payload)});
  }

  void start_demonstration(Millis at) {
    s_.pattern = generate_pattern(seeds_.next(), cfg_);
    const std::size_t n = s_.pattern.notes.size();
    s_.stars.assign(n, Star::Black);
    s_.next_note = 0;
    s_.attempts_this_pattern = 1;
    s_.current_matches.clear();
    s_.face = Face::Neutral;
    for (std::size_t i = 0; i < n; ++i) emit(EffectKind::StarUpdate, at, StarPayload{i, Star::Black});
    emit(EffectKind::FaceUpdate, at, FacePayload{Face::Neutral});

    Millis cursor = std::max(at + cfg_.demo_lead, s_.vibration_busy_until);
    for (const auto& note : s_.pattern.notes) {
      s_.vibration.push_back({cursor, cursor + note.on});
      s_.vibration_busy_until = cursor + note.on;
      cursor += note.on + note.gap;
    }
    s_.phase = Phase::Demonstrating;
    s_.phase_entered = at;
    s_.phase_deadline = cursor;
  }

  void fail_attempt(Millis at) {
    ++s_.attempts_this_pattern;
    s_.next_note = 0;
    s_.current_matches.clear();
    for (std::size_t i = 0; i < s_.stars.size(); ++i) {
      if (s_.stars[i] == Star::Gold) {
        s_.stars[i] = Star::Black;
        emit(EffectKind::StarUpdate, at, StarPayload{i, Star::Black});
      }
    }
  }

  void complete(Millis at) {
    const double precision = attempt_precision(s_.current_matches, s_.pattern.notes.size());
    ++s_.patterns_completed;
    emit(EffectKind::PatternComplete, at,
         CompletionPayload{s_.patterns_completed, s_.attempts_this_pattern, precision});
    s_.attempts_this_pattern = 1;
    s_.face = Face::Smiling;
    emit(EffectKind::FaceUpdate, at, FacePayload{Face::Smiling});

    const Millis start = std::max(at, s_.vibration_busy_until);
    s_.vibration.push_back({start, start + cfg_.success_buzz});
    s_.vibration_busy_until = start + cfg_.success_buzz;
    s_.phase = Phase::SuccessBuzz;
    s_.phase_entered = at;
    s_.phase_deadline = start + cfg_.success_buzz;
  }

  void end_session(Millis at) {
    // A running segment finishes at its scheduled end so that no emitted
    // interval falls below the actuator floor.
    Millis quiet = at;
    if (s_.vibrating) {
      quiet = s_.vibration.front().off;
      emit(EffectKind::VibrateOff, quiet);
      s_.vibrating = false;
    }
    s_.vibration.clear();
    s_.vibration_busy_until = quiet;
    emit(EffectKind::SessionEnd, at);

    s_.phase = Phase::Idle;
    s_.phase_entered = at;
    s_.next_note = 0;
    s_.current_matches.clear();
    s_.attempts_this_pattern = 0;
    s_.face = Face::Neutral;
  }

  GameState s_;
  const GameConfig& cfg_;
  SeedStream& seeds_;
  std::vector<Effect> out_;
};

} // namespace detail

/// Pure transition function of the game. Timers (vibration edges, end of
/// demonstration or buzz, abandoned gaps, idle timeout) due at or before
/// `now` fire first, at their exact deadlines, so results do not depend on
/// how often TimerTick is delivered.
inline StepResult step(const GameState& state, Input input, Millis now, const GameConfig& config,
                       SeedStream& seeds) {
  if (state.clock && now < *state.clock)
    throw SequencingError("step at " + std::to_string(now.count()) + " ms precedes " +
                          std::to_string(state.clock->count()) + " ms");
  detail::Transition t(state, config, seeds);
  t.advance(now);
  switch (input) {
  case Input::GraspPress:
    t.press(now);
    break;
  case Input::GraspRelease:
    t.release(now);
    break;
  case Input::TimerTick:
    break;
  }
  t.advance(now);
  auto result = std::move(t).finish();
  result.state.clock = now;
  return result;
}

/// Earliest pending timer, if any. Drivers can skip idle time up to it.
inline std::optional<Millis> next_deadline(const GameState& s, const GameConfig& cfg) {
  std::optional<Millis> best;
  auto consider = [&](Millis at) {
    if (!best || at < *best) best = at;
  };
  if (!s.vibration.empty()) consider(s.vibrating ? s.vibration.front().off : s.vibration.front().on);
  if (s.phase == Phase::Demonstrating || s.phase == Phase::SuccessBuzz) consider(s.phase_deadline);
  if (s.phase == Phase::AwaitingInput && s.next_note > 0 && !s.grasped) {
    const Millis gap = s.pattern.notes[s.next_note - 1].gap;
    consider(s.last_release +
             Millis{std::llround(cfg.abandon_gap_factor * static_cast<double>(gap.count()))});
  }
  if (s.phase != Phase::Idle && !s.grasped) consider(s.last_release + cfg.session_idle_end);
  return best;
}

/// Stateful convenience wrapper owning config, seeds and state.
class Engine {
public:
  explicit Engine(GameConfig config = {}, std::uint64_t pattern_seed = 0)
      : config_(config), seeds_(pattern_seed) {
    config_.validate();
  }

  const std::vector<Effect>& step(Input input, Millis now) {
    auto r = rhythm::step(state_, input, now, config_, seeds_);
    state_ = std::move(r.state);
    last_ = std::move(r.effects);
    return last_;
  }

  const std::vector<Effect>& press(Millis now) { return step(Input::GraspPress, now); }
  const std::vector<Effect>& release(Millis now) { return step(Input::GraspRelease, now); }
  const std::vector<Effect>& tick(Millis now) { return step(Input::TimerTick, now); }

  void set_mode(Mode mode) { state_.mode = mode; }

  const GameState& state() const { return state_; }
  const GameConfig& config() const { return config_; }
  std::optional<Millis> next_deadline() const { return rhythm::next_deadline(state_, config_); }

private:
  GameConfig config_;
  SeedStream seeds_;
  GameState state_;
  std::vector<Effect> last_;
};

inline std::string_view to_string(EffectKind k) {
  switch (k) {
  case EffectKind::VibrateOn: return "VibrateOn";
  case EffectKind::VibrateOff: return "VibrateOff";
  case EffectKind::StarUpdate: return "StarUpdate";
  case EffectKind::FaceUpdate: return "FaceUpdate";
  case EffectKind::PatternComplete: return "PatternComplete";
  case EffectKind::SessionEnd: return "SessionEnd";
  }
  return "?";
}

inline std::string_view to_string(Mode m) {
  switch (m) {
  case Mode::Visual: return "Visual";
  case Mode::Blindfolded: return "Blindfolded";
  case Mode::Concealed: return "Concealed";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "Visual" || s == "visual") return Mode::Visual;
  if (s == "Blindfolded" || s == "blindfolded") return Mode::Blindfolded;
  if (s == "Concealed" || s == "concealed") return Mode::Concealed;
  return std::nullopt;
}

inline std::string_view to_string(Phase p) {
  switch (p) {
  case Phase::Idle: return "Idle";
  case Phase::Demonstrating: return "Demonstrating";
  case Phase::AwaitingInput: return "AwaitingInput";
  case Phase::SuccessBuzz: return "SuccessBuzz";
  }
  return "?";
}

} // namespace pocket::rhythm
