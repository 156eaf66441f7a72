// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per primary criterion.
//
//   acceptance                 run every criterion
//   acceptance --only NAME     run one
//   acceptance --list          print the names

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "pocketsim/analysis/store_reports.hpp"
#include "pocketsim/sim/cohort.hpp"
#include "pocketsim/telemetry/ingest.hpp"
#include "temp_dir.hpp"

using namespace pocket;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// match_note on the 10 ms grid against integer cross-multiplication.
Verdict match_oracle() {
  const auto t0 = Clock::now();
  std::size_t pairs = 0, disagreements = 0;
  for (std::int64_t p = 80; p <= 2000; p += 10) {
    for (std::int64_t t = 80; t <= 2000; t += 10) {
      const bool oracle = std::abs(p - t) * 100 <= 40 * t;
      if (rhythm::match_note(Millis{p}, Millis{t}, 0.40).matched != oracle) ++disagreements;
      ++pairs;
    }
  }
  const double secs = seconds_since(t0);
  return {disagreements == 0 && secs < 5.0,
          fmt("%zu pairs, %zu disagreements, %.3f s (limit 5 s)", pairs, disagreements, secs)};
}

// Zero-noise learner through sensor, debounce and engine.
Verdict perfect_player() {
  std::size_t games = 0, bad = 0, empty = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    sim::Scenario sc;
    sc.device_id = "perfect";
    sc.duration = Millis{3 * 60'000};
    sc.sample_period = Millis{10};
    sim::LearnerSpec l;
    l.model.skill = 1.0;
    l.max_games = 3;
    sc.learner = l;
    sim::RunOptions opt;
    opt.keep_effects = false;
    const auto log = sim::run_scenario(sc, seed, opt);
    if (log.outcomes.empty()) ++empty;
    for (const auto& o : log.outcomes) {
      ++games;
      if (o.attempts != 1 || o.precision_pct != 0.0) ++bad;
    }
  }
  return {bad == 0 && empty == 0,
          fmt("1000 seeds, %zu patterns completed, %zu not in 1 attempt at 0.0%%, %zu seeds without a game", games,
              bad, empty)};
}

sim::Scenario table_one_scenario() {
  sim::Scenario sc;
  sc.device_id = "pocket-t1";
  sc.session_label = "table-one";
  sc.duration = Millis{2 * 3'600'000};
  for (int m : {0, 30, 60, 90}) sc.grasps.push_back({Millis{m * 60'000}, Millis{4000}});
  sc.noise.scripted = {{Millis{10 * 60'000}, Millis{600}}, {Millis{70 * 60'000}, Millis{800}}};
  sc.reconnects = {{Millis{5 * 60'000}, Millis{60'000}},
                   {Millis{25 * 60'000}, Millis{120'000}},
                   {Millis{50 * 60'000}, Millis{30'000}},
                   {Millis{115 * 60'000}, Millis{180'000}}};
  sc.validate();
  return sc;
}

struct Delivered {
  telemetry::RelayRunStats stats;
  std::vector<telemetry::EventRecord> stored;
};

/// device log -> relay -> ingestion -> SQLite store.
Delivered deliver(const sim::SessionLog& log, telemetry::EventStore& store, telemetry::RelayConfig rc = {}) {
  telemetry::IngestService ingest(store, [] { return std::int64_t{0}; });
  telemetry::InProcessSink sink(ingest);
  store.create_session(log.session_id, 0, sim::session_meta_json(log));
  Delivered d;
  d.stats = telemetry::relay_frames(sim::frames_of(log), log.meta.outages, log.session_id, sink, rc);
  d.stored = store.query(log.session_id);
  return d;
}

bool same_records(const sim::SessionLog& log, const std::vector<telemetry::EventRecord>& stored) {
  if (stored.size() != log.events.size()) return false;
  std::set<std::string> a, b;
  for (const auto& r : log.events) a.insert(telemetry::encode_frame(r.frame));
  for (const auto& r : stored) b.insert(telemetry::encode_frame(r.frame));
  return a == b;
}

Verdict table_one() {
  const auto sc = table_one_scenario();
  std::size_t ok = 0;
  std::string last;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    test::TempDir dir;
    telemetry::EventStore store(dir.path / "events.db");
    const auto log = sim::run_scenario(sc, seed);
    const auto d = deliver(log, store);
    const auto r = analysis::window_report_from_store(store, log.session_id);
    const bool counts = r.events_per_window == std::vector<std::size_t>{1, 1, 1, 1};
    const bool good = counts && r.off_window_events == 2 && r.reconnects == 4 && d.stats.drops == 0 &&
                      d.stats.undelivered == 0 && same_records(log, d.stored);
    ok += good;
    last = fmt("windows %zu/%zu/%zu/%zu off_window %zu reconnects %llu lost %zu", r.events_per_window[0],
               r.events_per_window[1], r.events_per_window[2], r.events_per_window[3], r.off_window_events,
               static_cast<unsigned long long>(r.reconnects), log.events.size() - d.stored.size());
  }
  return {ok == 10, fmt("%zu/10 seeds match the script; last: %s", ok, last.c_str())};
}

Verdict table_two() {
  sim::Scenario sc;
  sc.device_id = "pocket-t2";
  sc.session_label = "table-two";
  sc.duration = Millis{8 * 3'600'000};
  sc.burst.count = 16;
  sc.burst.window = Millis{20'000};
  std::size_t ok = 0;
  double worst = 0;
  std::string last;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t0 = Clock::now();
    test::TempDir dir;
    telemetry::EventStore store(dir.path / "events.db");
    const auto log = sim::run_scenario(sc, seed);
    const auto d = deliver(log, store);
    const double secs = seconds_since(t0);
    worst = std::max(worst, secs);
    std::size_t touches = 0;
    std::int64_t max_ts = 0;
    for (const auto& r : d.stored) {
      touches += analysis::counts(r, analysis::Counting::Grasp);
      max_ts = std::max(max_ts, r.frame.ts_ms);
    }
    ok += touches == 16 && max_ts <= 20'000 && secs < 10.0 && same_records(log, d.stored);
    last = fmt("%zu touch events, latest ts %lld ms", touches, static_cast<long long>(max_ts));
  }
  return {ok == 10, fmt("%zu/10 seeds; last: %s; slowest %.3f s (limit 10 s)", ok, last.c_str(), worst)};
}

Verdict learning_curve() {
  std::size_t strict = 0, endpoint = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto curve = analysis::learning_curve(sim::run_cohort({}, seed));
    const auto& p = curve.points;
    bool s = p.size() == 7;
    for (std::size_t g = 1; s && g < p.size(); ++g)
      s = p[g].mean_attempts < p[g - 1].mean_attempts && *p[g].stdev_attempts <= *p[g - 1].stdev_attempts;
    strict += s;
    endpoint += p.size() == 7 && p[6].mean_attempts < p[0].mean_attempts &&
                *p[6].stdev_attempts <= *p[0].stdev_attempts;
  }
  return {strict >= 95, fmt("strictly decreasing means and non-increasing stdev in %zu/100 cohort seeds (need 95); "
                            "game 7 below game 1 in %zu/100",
                            strict, endpoint)};
}

Verdict two_minute_session() {
  std::size_t runs = 0, failed = 0;
  long long longest = 0;
  for (double skill : {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      sim::Scenario sc;
      sc.device_id = "study";
      sc.duration = Millis{120'000};
      sc.sample_period = Millis{10};
      sim::LearnerSpec l;
      l.model.skill = skill;
      l.visual_attempts = 1;
      sc.learner = l;
      const auto log = sim::run_scenario(sc, seed);
      ++runs;
      longest = std::max<long long>(longest, log.meta.ended_at.count());
      std::size_t in_time = 0;
      for (const auto& e : log.effects)
        in_time += e.kind == rhythm::EffectKind::PatternComplete && e.at <= sc.duration;
      bool concealed_after_first = in_time > 0;
      for (std::size_t i = 1; i < log.outcomes.size(); ++i)
        concealed_after_first &= log.outcomes[i].mode == rhythm::Mode::Concealed;
      if (!concealed_after_first) ++failed;
    }
  }
  return {failed == 0, fmt("%zu runs at skill 0.5..1.0, %zu without a game completed by 120 s; all terminated, latest "
                           "wind-down end %lld ms virtual",
                           runs, failed, longest)};
}

Verdict exactly_once() {
  std::size_t ok = 0;
  std::uint64_t frames_total = 0, outages_total = 0, max_peak = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, "exactly-once"));
    std::vector<telemetry::NotificationFrame> frames;
    std::int64_t ts = 0;
    for (std::uint64_t seq = 1; seq <= 10'000; ++seq) {
      ts += rng.uniform_int(0, 2000);
      const bool plate = rng.uniform01() < 0.6;
      frames.push_back({seq, "dev-" + std::to_string(seed), ts,
                        plate ? std::optional<std::uint8_t>(rng.uniform_int(0, 4)) : std::nullopt,
                        rng.uniform01() < 0.5 ? telemetry::EventKind::Touch : telemetry::EventKind::Release,
                        plate ? std::optional<std::uint8_t>(rng.uniform_int(0, 100)) : std::nullopt});
    }
    // Outages of up to ~1000 frames each; the relay holds 2000.
    std::vector<telemetry::Outage> outages;
    std::int64_t at = rng.uniform_int(0, 200'000);
    while (at < ts) {
      const std::int64_t len = rng.uniform_int(1'000, 1'000'000);
      outages.push_back({Millis{at}, Millis{len}});
      at += len + rng.uniform_int(1'000, 2'000'000);
    }
    telemetry::RelayConfig rc;
    rc.capacity = 2000;
    rc.batch_size = static_cast<std::size_t>(rng.uniform_int(1, 64));

    test::TempDir dir;
    telemetry::EventStore store(dir.path / "events.db");
    telemetry::IngestService ingest(store, [] { return std::int64_t{0}; });
    telemetry::InProcessSink sink(ingest);
    store.create_session("s", 0);
    const auto stats = telemetry::relay_frames(frames, outages, "s", sink, rc);
    const auto stored = store.query("s");
    bool same = stored.size() == frames.size() && stats.drops == 0;
    std::map<std::uint64_t, std::string> by_seq;
    for (const auto& r : stored) by_seq[r.frame.seq] = telemetry::encode_frame(r.frame);
    same = same && by_seq.size() == frames.size();
    for (const auto& f : frames) {
      if (!same) break;
      const auto it = by_seq.find(f.seq);
      same = it != by_seq.end() && it->second == telemetry::encode_frame(f);
    }
    ok += same;
    frames_total += frames.size();
    outages_total += outages.size();
    max_peak = std::max<std::uint64_t>(max_peak, stats.peak_buffer);
  }
  return {ok == 50, fmt("%zu/50 seeds byte-identical; %llu frames, %llu outages, peak buffer %llu of 2000", ok,
                        static_cast<unsigned long long>(frames_total), static_cast<unsigned long long>(outages_total),
                        static_cast<unsigned long long>(max_peak))};
}

/// Returns an empty string when the vibration effects are legal.
std::string vibration_violation(const std::vector<rhythm::Effect>& effects, Millis floor) {
  std::optional<Millis> on;
  Millis last_off{-1};
  for (const auto& e : effects) {
    if (e.kind == rhythm::EffectKind::VibrateOn) {
      if (on) return fmt("nested on at %lld", static_cast<long long>(e.at.count()));
      if (e.at < last_off) return fmt("overlap at %lld", static_cast<long long>(e.at.count()));
      on = e.at;
    } else if (e.kind == rhythm::EffectKind::VibrateOff) {
      if (!on) return fmt("off without on at %lld", static_cast<long long>(e.at.count()));
      if (e.at - *on < floor) return fmt("%lld ms interval", static_cast<long long>((e.at - *on).count()));
      last_off = e.at;
      on.reset();
    }
  }
  return on ? "left vibrating" : "";
}

/// Half the runs press at random; the other half play the patterns with
/// noise and occasional stray grasps, so completions and buzzes happen.
std::vector<rhythm::Effect> random_game(std::uint64_t seed, std::size_t& completions) {
  Rng rng(derive_seed(seed, "vibration"));
  rhythm::Engine engine({}, derive_seed(seed, "pattern"));
  std::vector<rhythm::Effect> effects;
  auto add = [&](const std::vector<rhythm::Effect>& fx) {
    for (const auto& e : fx) {
      completions += e.kind == rhythm::EffectKind::PatternComplete;
      effects.push_back(e);
    }
  };
  Millis t{rng.uniform_int(0, 300)};
  if (seed % 2 == 0) {
    const Millis horizon{rng.uniform_int(5'000, 90'000)};
    while (t < horizon) {
      add(engine.press(t));
      t += Millis{rng.uniform_int(1, 2500)};
      add(engine.release(t));
      t += Millis{rng.uniform_int(1, rng.uniform01() < 0.1 ? 12'000 : 2500)};
    }
  } else {
    sim::ChildModel child;
    child.skill = rng.uniform01();
    const auto patterns = static_cast<std::size_t>(rng.uniform_int(1, 4));
    for (int guard = 0; guard < 60 && engine.state().patterns_completed < patterns; ++guard) {
      add(engine.tick(t));
      const auto& s = engine.state();
      if (s.phase == rhythm::Phase::Idle || s.phase == rhythm::Phase::Demonstrating) {
        // Grasp through the demonstration, sometimes letting go early.
        add(engine.press(t));
        const Millis open = engine.state().phase_deadline;
        t = rng.uniform01() < 0.2 ? t + Millis{rng.uniform_int(1, 1500)} : std::max(t + Millis{1}, open);
        add(engine.release(t));
      } else if (s.phase == rhythm::Phase::AwaitingInput && s.next_note == 0) {
        const auto play = sim::synth_child_play(child, s.pattern, t + Millis{rng.uniform_int(50, 800)}, rng,
                                                Millis{rng.uniform01() < 0.5 ? 1 : 10});
        for (const auto& g : play) {
          t = std::max(t, g.ts);
          add(g.kind == touch::GraspKind::Press ? engine.press(t) : engine.release(t));
          if (g.kind == touch::GraspKind::Press) continue;
          if (rng.uniform01() < 0.03) {
            // Stray grasp mid-attempt.
            t += Millis{rng.uniform_int(1, 300)};
            add(engine.press(t));
            t += Millis{rng.uniform_int(1, 300)};
            add(engine.release(t));
            break;
          }
          const auto& now = engine.state();
          if (now.phase != rhythm::Phase::AwaitingInput || now.next_note == 0) break;
        }
      } else {
        // Buzzing, or an attempt left hanging: wait for the next timer.
        const auto due = engine.next_deadline();
        t = due ? std::max(t, *due) : t + Millis{1};
      }
    }
  }
  // Let every timer run out, including the idle end of the session.
  for (int i = 0; i < 64; ++i) {
    const auto due = engine.next_deadline();
    if (!due) break;
    t = std::max(t, *due);
    add(engine.tick(t));
  }
  return effects;
}

Verdict vibration_legality() {
  std::size_t bad = 0, intervals = 0, completions = 0;
  std::string first;
  for (std::uint64_t seed = 0; seed < 10'000; ++seed) {
    const auto effects = random_game(seed, completions);
    for (const auto& e : effects) intervals += e.kind == rhythm::EffectKind::VibrateOn;
    const auto why = vibration_violation(effects, Millis{80});
    if (!why.empty()) {
      if (first.empty()) first = fmt("seed %llu: %s", static_cast<unsigned long long>(seed), why.c_str());
      ++bad;
    }
  }
  return {bad == 0, fmt("10000 runs, %zu vibration intervals, %zu completions, %zu illegal%s%s", intervals,
                        completions, bad, first.empty() ? "" : "; first ", first.c_str())};
}

const std::vector<std::pair<std::string, std::function<Verdict()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Verdict()>>> all = {
      {"match_oracle", match_oracle},
      {"perfect_player", perfect_player},
      {"table_one", table_one},
      {"table_two", table_two},
      {"learning_curve", learning_curve},
      {"two_minute_session", two_minute_session},
      {"exactly_once", exactly_once},
      {"vibration_legality", vibration_legality},
  };
  return all;
}

} // namespace

int main(int argc, char** argv) {
  std::optional<std::string> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = argv[++i];
    } else if (std::strcmp(argv[i], "--list") == 0) {
      for (const auto& [name, _] : criteria()) std::printf("%s\n", name.c_str());
      return 0;
    } else {
      std::fprintf(stderr, "usage: acceptance [--only NAME | --list]\n");
      return 2;
    }
  }
  bool all_pass = true, found = false;
  for (const auto& [name, run] : criteria()) {
    if (only && *only != name) continue;
    found = true;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    all_pass &= v.pass;
  }
  if (!found) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only->c_str());
    return 2;
  }
  return all_pass ? 0 : 1;
}
