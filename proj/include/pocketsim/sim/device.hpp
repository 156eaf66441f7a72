// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/engine.hpp"
#include "pocketsim/sim/child.hpp"
#include "pocketsim/sim/scenario.hpp"
#include "pocketsim/telemetry/frame.hpp"
#include "pocketsim/touch/pipeline.hpp"

namespace pocket::sim {

using telemetry::EventRecord;
using telemetry::NotificationFrame;

struct GameOutcome {
  std::size_t pattern_no = 0;
  std::size_t attempts = 0;
  double precision_pct = 0.0;
  rhythm::Mode mode = rhythm::Mode::Visual;

  bool operator==(const GameOutcome&) const = default;
};

/// Seeds of the independent random streams used by a run.
struct SeedSet {
  std::uint64_t master = 0;
  std::uint64_t pattern = 0;
  std::uint64_t noise = 0;
  std::uint64_t burst = 0;
  std::uint64_t learner = 0;
  std::uint64_t sensor = 0;

  static SeedSet derive(std::uint64_t master, const std::optional<std::uint64_t>& learner_override = {}) {
    SeedSet s;
    s.master = master;
    s.pattern = derive_seed(master, "pattern");
    s.noise = derive_seed(master, "noise");
    s.burst = derive_seed(master, "burst");
    s.learner = learner_override ? *learner_override : derive_seed(master, "learner");
    s.sensor = derive_seed(master, "sensor");
    return s;
  }

  bool operator==(const SeedSet&) const = default;
};

struct SessionMeta {
  std::uint64_t scenario_hash = 0;
  SeedSet seeds;
  rhythm::GameConfig game;
  std::optional<std::size_t> visual_attempts;
  /// Start of each instructed grasp, used as report windows.
  std::vector<Millis> windows;
  std::vector<telemetry::Outage> outages;
  std::size_t absorbed_blips = 0;
  std::size_t injected_blips = 0;
  Millis ended_at{0};

  bool operator==(const SessionMeta&) const = default;
};

struct SessionLog {
  std::string device_id;
  std::string session_id;
  /// Ordered by (ts, seq).
  std::vector<EventRecord> events;
  std::vector<GameOutcome> outcomes;
  SessionMeta meta;
  /// Every effect the engine emitted, in emission order.
  std::vector<rhythm::Effect> effects;

  bool operator==(const SessionLog&) const = default;
};

struct RunOptions {
  /// Jump over stretches where nothing can change. Results are identical
  /// to stepping every sample period.
  bool skip_idle = true;
  bool keep_effects = true;
};

namespace detail {

struct Excursion {
  std::size_t plate;
  Millis start;
  Millis end;
};

/// Static per-plate coverage (instructed grasps, noise, burst) swept in
/// time order.
class Coverage {
public:
  explicit Coverage(std::vector<Excursion> excursions) {
    for (const auto& e : excursions) {
      if (e.end <= e.start) continue;
      edges_.push_back({e.start, e.plate, +1});
      edges_.push_back({e.end, e.plate, -1});
    }
    std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
      return a.at != b.at ? a.at < b.at : a.delta < b.delta;
    });
  }

  void advance_to(Millis t) {
    while (next_ < edges_.size() && edges_[next_].at <= t) {
      count_[edges_[next_].plate] += edges_[next_].delta;
      ++next_;
    }
  }

  bool covered(std::size_t plate) const { return count_[plate] > 0; }

  std::optional<Millis> next_edge() const {
    if (next_ < edges_.size()) return edges_[next_].at;
    return std::nullopt;
  }

private:
  struct Edge {
    Millis at;
    std::size_t plate;
    int delta;
  };
  std::vector<Edge> edges_;
  std::size_t next_ = 0;
  std::array<int, touch::kPlateCount> count_{};
};

inline Millis draw_on_grid(Rng& rng, Millis lo, Millis hi, Millis grid) {
  const auto first = ceil_to(lo, grid).count() / grid.count();
  const auto last = std::max(first, hi.count() / grid.count());
  return Millis{rng.uniform_int(first, last) * grid.count()};
}

inline std::uint8_t cap_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 100));
}

} // namespace detail

/// Learner grasps cover these plates together.
inline const touch::PlateMask kLearnerPlates{0b00011};

/// Plans the static excursions of a scenario. Returns them with the count of
/// noise blips drawn.
inline std::pair<std::vector<detail::Excursion>, std::size_t> plan_excursions(const Scenario& sc,
                                                                             const SeedSet& seeds) {
  std::vector<detail::Excursion> ex;
  for (const auto& g : sc.grasps) {
    std::size_t k = 0;
    for (std::size_t p = 0; p < touch::kPlateCount; ++p) {
      if (!g.plates[p]) continue;
      const Millis offset = g.stagger * static_cast<std::int64_t>(k++);
      ex.push_back({p, g.at + offset, g.at + g.hold - offset});
    }
  }

  std::size_t blips = 0;
  Rng noise(seeds.noise);
  for (const auto& b : sc.noise.scripted) {
    ex.push_back({static_cast<std::size_t>(noise.uniform_int(0, touch::kPlateCount - 1)), b.at, b.at + b.duration});
    ++blips;
  }
  if (sc.noise.rate_per_hour > 0.0) {
    const double rate_per_ms = sc.noise.rate_per_hour / 3'600'000.0;
    double t = 0.0;
    for (;;) {
      t += noise.exponential(rate_per_ms);
      const auto plate = static_cast<std::size_t>(noise.uniform_int(0, touch::kPlateCount - 1));
      const Millis len = detail::draw_on_grid(noise, sc.noise.blip_min, sc.noise.blip_max, sc.sample_period);
      const Millis at = ceil_to(Millis{static_cast<std::int64_t>(t)}, sc.sample_period);
      if (at + len > sc.duration) break;
      ex.push_back({plate, at, at + len});
      ++blips;
    }
  }

  if (sc.burst.count > 0) {
    Rng burst(seeds.burst);
    const Millis slot = sc.burst.window / static_cast<std::int64_t>(sc.burst.count);
    for (std::size_t i = 0; i < sc.burst.count; ++i) {
      const auto plate = static_cast<std::size_t>(burst.uniform_int(0, touch::kPlateCount - 1));
      const Millis hold = detail::draw_on_grid(burst, sc.burst.hold_min, sc.burst.hold_max, sc.sample_period);
      const Millis at = ceil_to(slot * static_cast<std::int64_t>(i), sc.sample_period) + sc.sample_period;
      ex.push_back({plate, at, at + hold});
    }
  }
  return {std::move(ex), blips};
}

/// Runs one virtual robot through a scenario on a virtual clock advancing
/// by the sample period. Deterministic in (scenario, seed).
inline SessionLog run_scenario(const Scenario& sc, std::uint64_t seed, const RunOptions& opt = {}) {
  sc.validate();
  const Millis period = sc.sample_period;
  const SeedSet seeds =
      SeedSet::derive(seed, sc.learner ? sc.learner->model.seed : std::optional<std::uint64_t>{});

  SessionLog log;
  log.device_id = sc.device_id;
  log.session_id = sc.session_label;
  log.meta.scenario_hash = scenario_hash(sc);
  log.meta.seeds = seeds;
  log.meta.game = sc.game;
  log.meta.outages = sc.reconnects;
  if (sc.learner) log.meta.visual_attempts = sc.learner->visual_attempts;
  for (const auto& g : sc.grasps) log.meta.windows.push_back(g.at);

  auto [excursions, blips] = plan_excursions(sc, seeds);
  log.meta.injected_blips = blips;
  detail::Coverage coverage(std::move(excursions));

  touch::PipelineConfig pcfg;
  pcfg.thresholds.fill(sc.threshold);
  pcfg.hysteresis = sc.hysteresis;
  pcfg.sample_period = period;
  pcfg.debounce = sc.debounce;
  touch::TouchPipeline pipeline(pcfg);

  rhythm::Engine engine(sc.game, seeds.pattern);
  ModePolicy policy(sc.learner ? sc.learner->visual_attempts : std::nullopt);
  std::optional<SyntheticChild> child;
  if (sc.learner) child.emplace(*sc.learner, seeds.learner, sc.game.tick, sc.duration);
  Rng sensor(seeds.sensor);

  std::uint64_t seq = 0;
  auto record = [&](std::optional<std::uint8_t> plate, telemetry::EventKind kind, Millis ts,
                    std::optional<std::uint8_t> cap) {
    NotificationFrame f{++seq, sc.device_id, ts.count(), plate, kind, cap};
    log.events.push_back({std::move(f), sc.session_label, std::nullopt});
  };

  auto after_step = [&](const std::vector<rhythm::Effect>& effects, Millis now) {
    for (const auto& e : effects) {
      if (e.kind == rhythm::EffectKind::PatternComplete) {
        const auto& c = std::get<rhythm::CompletionPayload>(e.payload);
        log.outcomes.push_back({c.pattern_no, c.attempts, c.precision_pct, e.mode});
      }
    }
    if (opt.keep_effects) log.effects.insert(log.effects.end(), effects.begin(), effects.end());
    policy.observe(engine.state(), effects);
    engine.set_mode(policy.mode());
    if (child) child->observe(engine.state(), effects, now);
  };

  // A learner session is allowed to wind down after the nominal end.
  const Millis hard_stop = sc.duration + (child ? sc.game.session_idle_end + sc.game.success_buzz +
                                                      sc.game.demo_lead + sc.game.note_max * 10 +
                                                      sc.game.gap_max * 10
                                                : Millis{0});
  const auto wall_start = std::chrono::steady_clock::now();

  Millis t{0};
  for (;;) {
    if (sc.time_scale > 0.0) {
      const auto wall_target =
          wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                           std::chrono::duration<double, std::milli>(static_cast<double>(t.count()) / sc.time_scale));
      std::this_thread::sleep_until(wall_target);
    }

    coverage.advance_to(t);
    const bool learner_touch = child && child->touching(t);
    touch::PipelineOutput out;
    for (std::size_t p = 0; p < touch::kPlateCount; ++p) {
      const bool covered = coverage.covered(p) || (learner_touch && kLearnerPlates[p]);
      double value = covered ? sc.touch_level : sc.baseline_level;
      if (sc.jitter > 0.0) value = std::clamp(value + sensor.normal(0.0, sc.jitter), 0.0, 100.0);
      const std::size_t before = out.transitions.size();
      pipeline.push({p, value, t}, out);
      if (out.transitions.size() > before && sc.record != RecordLevel::Grasp) {
        const auto& tr = out.transitions.back();
        record(static_cast<std::uint8_t>(p),
               tr.reading == touch::PlateReading::Touched ? telemetry::EventKind::Touch
                                                          : telemetry::EventKind::Release,
               tr.since, detail::cap_byte(value));
      }
    }

    for (const auto& g : out.grasps) {
      if (sc.record != RecordLevel::Plate)
        record(std::nullopt, g.kind == touch::GraspKind::Press ? telemetry::EventKind::Touch
                                                               : telemetry::EventKind::Release,
               g.ts, std::nullopt);
      after_step(engine.tick(g.ts), t);
      after_step(g.kind == touch::GraspKind::Press ? engine.press(g.ts) : engine.release(g.ts), t);
    }
    after_step(engine.tick(pipeline.safe_horizon(t)), t);

    const bool winding_down = t >= sc.duration;
    if (winding_down) {
      if (!child) break;
      child->stop(t);
      if ((engine.state().phase == rhythm::Phase::Idle && !pipeline.grasped()) || t >= hard_stop) break;
    }

    Millis next = t + period;
    if (opt.skip_idle && sc.jitter == 0.0) {
      std::optional<Millis> soonest;
      auto consider = [&](std::optional<Millis> at) {
        if (at && (!soonest || *at < *soonest)) soonest = at;
      };
      consider(coverage.next_edge());
      if (child) {
        consider(child->next_change_after(t));
        // A hold cut short at `t` shows up at the next sample.
        if (child->touching(t) != learner_touch) consider(t + period);
      }
      consider(engine.next_deadline());
      consider(pipeline.pending_confirmation());
      if (!winding_down) consider(sc.duration);
      if (soonest) next = std::max(next, ceil_to(*soonest, period));
      else if (winding_down) break;
      else next = std::max(next, ceil_to(sc.duration, period));
    }
    t = next;
  }
  log.meta.ended_at = t;
  log.meta.absorbed_blips = pipeline.absorbed();

  std::stable_sort(log.events.begin(), log.events.end(), [](const EventRecord& a, const EventRecord& b) {
    return a.frame.ts_ms != b.frame.ts_ms ? a.frame.ts_ms < b.frame.ts_ms : a.frame.seq < b.frame.seq;
  });
  return log;
}

/// Feeds logged grasp events back through the touch pipeline's fusion and
/// the game engine. Uses device-level records when present, otherwise fuses
/// per-plate records.
inline std::vector<GameOutcome> replay_outcomes(std::span<const EventRecord> events, const rhythm::GameConfig& game,
                                                std::uint64_t pattern_seed,
                                                std::optional<std::size_t> visual_attempts) {
  std::vector<const NotificationFrame*> frames;
  for (const auto& r : events) frames.push_back(&r.frame);
  std::stable_sort(frames.begin(), frames.end(), [](auto* a, auto* b) {
    return a->ts_ms != b->ts_ms ? a->ts_ms < b->ts_ms : a->seq < b->seq;
  });
  const bool have_device_level =
      std::any_of(frames.begin(), frames.end(), [](auto* f) { return f->device_level(); });

  std::vector<touch::GraspEvent> grasps;
  if (have_device_level) {
    for (auto* f : frames)
      if (f->device_level())
        grasps.push_back({f->event == telemetry::EventKind::Touch ? touch::GraspKind::Press
                                                                  : touch::GraspKind::Release,
                          Millis{f->ts_ms}, {}});
  } else {
    auto plates = touch::initial_plates();
    for (auto* f : frames) {
      auto before = plates;
      auto& p = plates[*f->plate];
      p.touched = f->event == telemetry::EventKind::Touch;
      p.since = Millis{f->ts_ms};
      if (auto g = touch::fuse(before, plates, Millis{f->ts_ms})) grasps.push_back(*g);
    }
  }

  rhythm::Engine engine(game, pattern_seed);
  ModePolicy policy(visual_attempts);
  std::vector<GameOutcome> outcomes;
  auto after = [&](const std::vector<rhythm::Effect>& effects) {
    for (const auto& e : effects)
      if (e.kind == rhythm::EffectKind::PatternComplete) {
        const auto& c = std::get<rhythm::CompletionPayload>(e.payload);
        outcomes.push_back({c.pattern_no, c.attempts, c.precision_pct, e.mode});
      }
    policy.observe(engine.state(), effects);
    engine.set_mode(policy.mode());
  };
  for (const auto& g : grasps) {
    after(engine.tick(g.ts));
    after(g.kind == touch::GraspKind::Press ? engine.press(g.ts) : engine.release(g.ts));
  }
  return outcomes;
}

inline std::vector<GameOutcome> replay_outcomes(const SessionLog& log) {
  return replay_outcomes(log.events, log.meta.game, log.meta.seeds.pattern, log.meta.visual_attempts);
}

/// Frames of a log in seq order, as a device would have pushed them.
inline std::vector<NotificationFrame> frames_of(const SessionLog& log) {
  std::vector<NotificationFrame> out;
  out.reserve(log.events.size());
  for (const auto& r : log.events) out.push_back(r.frame);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  return out;
}

} // namespace pocket::sim
