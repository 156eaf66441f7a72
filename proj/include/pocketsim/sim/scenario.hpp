// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pocketsim/core/error.hpp"
#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/config.hpp"
#include "pocketsim/telemetry/relay.hpp"
#include "pocketsim/touch/plate.hpp"

namespace pocket::sim {

using telemetry::Outage;
using touch::PlateMask;

/// An instructed grasp: the listed plates are covered from `at` for `hold`.
/// With `stagger` > 0 each further plate joins that much later and leaves
/// that much earlier, producing multi-plate touch multiplicity.
struct GraspSpec {
  Millis at{0};
  Millis hold{0};
  PlateMask plates{1};
  Millis stagger{0};

  bool operator==(const GraspSpec&) const = default;
};

struct Blip {
  Millis at{0};
  Millis duration{0};
  bool operator==(const Blip&) const = default;
};

/// False positives: Poisson arrivals of short single-plate excursions, plus
/// any scripted ones.
struct NoiseModel {
  double rate_per_hour = 0.0;
  Millis blip_min{200};
  Millis blip_max{900};
  std::vector<Blip> scripted;

  bool operator==(const NoiseModel&) const = default;
};

/// Pocket-insertion fumbling: `count` short grasps spread over the first
/// `window` of the session.
struct BurstSpec {
  std::size_t count = 0;
  Millis window{20000};
  Millis hold_min{200};
  Millis hold_max{500};

  bool operator==(const BurstSpec&) const = default;
};

/// Synthetic child playing the rhythm game.
struct ChildModel {
  /// 0..1; timing noise shrinks as skill grows.
  double skill = 0.5;
  /// Skill gained per completed game.
  double learning_rate = 0.0;
  Millis reaction{400};
  std::optional<std::uint64_t> seed;
  /// Noise stddev at skill 0, as a fraction of the target duration.
  double base_sigma = 0.45;

  double sigma() const { return base_sigma * (1.0 - skill); }
  bool operator==(const ChildModel&) const = default;
};

struct LearnerSpec {
  ChildModel model;
  /// Attempts played in Visual mode before switching to Concealed; empty
  /// keeps the whole session Visual.
  std::optional<std::size_t> visual_attempts;
  /// Stop after this many completed games (0: play until the duration ends).
  std::size_t max_games = 0;
  Millis start{0};

  bool operator==(const LearnerSpec&) const = default;
};

enum class RecordLevel { Grasp, Plate, Both };

struct Scenario {
  std::string device_id = "pocket-01";
  std::string session_label = "session";
  Millis duration{0};
  Millis sample_period{100};
  std::vector<GraspSpec> grasps;
  NoiseModel noise;
  BurstSpec burst;
  std::optional<LearnerSpec> learner;
  std::vector<Outage> reconnects;
  /// Virtual ms per wall ms when paced; 0 runs unpaced.
  double time_scale = 0.0;

  double threshold = 50.0;
  double hysteresis = 0.0;
  bool debounce = true;
  double baseline_level = 80.0;
  double touch_level = 20.0;
  /// Stddev of per-sample sensor noise around the levels.
  double jitter = 0.0;
  RecordLevel record = RecordLevel::Both;

  rhythm::GameConfig game;

  bool operator==(const Scenario&) const = default;

  void validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("scenario: " + why); };
    if (duration < Millis{0}) fail("duration must be non-negative");
    if (sample_period <= Millis{0}) fail("sample_period must be positive");
    if (device_id.empty()) fail("device_id must not be empty");
    for (const auto& g : grasps) {
      if (g.at < Millis{0} || g.hold <= Millis{0}) fail("grasp times must be non-negative, hold positive");
      if (g.at + g.hold > duration) fail("grasp extends beyond the session duration");
      if (g.plates.none()) fail("grasp covers no plate");
      if (g.stagger < Millis{0}) fail("grasp stagger must be non-negative");
    }
    if (noise.rate_per_hour < 0.0) fail("noise rate must be non-negative");
    if (noise.blip_min <= Millis{0} || noise.blip_min > noise.blip_max) fail("invalid blip duration range");
    for (const auto& b : noise.scripted)
      if (b.at < Millis{0} || b.duration <= Millis{0} || b.at + b.duration > duration)
        fail("scripted blip outside the session");
    if (burst.count > 0) {
      if (burst.hold_min <= Millis{0} || burst.hold_min > burst.hold_max) fail("invalid burst hold range");
      if (burst.window > duration) fail("burst window exceeds duration");
      const auto slot = burst.window / static_cast<std::int64_t>(burst.count);
      if (slot < burst.hold_max * 2) fail("burst window too short for its grasp count");
    }
    try {
      telemetry::validate_outages(reconnects);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    if (time_scale < 0.0) fail("time_scale must be non-negative");
    if (!(threshold > 0.0 && threshold < 100.0)) fail("threshold must lie in (0, 100)");
    if (hysteresis < 0.0) fail("hysteresis must be non-negative");
    if (!(touch_level < threshold && baseline_level >= threshold + hysteresis))
      fail("touch/baseline levels must straddle the threshold");
    if (baseline_level > 100.0 || touch_level < 0.0) fail("levels must lie in [0, 100]");
    if (jitter < 0.0) fail("jitter must be non-negative");
    if (learner) {
      const auto& m = learner->model;
      if (m.skill < 0.0 || m.skill > 1.0) fail("learner skill must lie in [0, 1]");
      if (m.learning_rate < 0.0) fail("learning_rate must be non-negative");
      if (m.base_sigma < 0.0) fail("base_sigma must be non-negative");
      if (m.reaction <= Millis{0}) fail("reaction must be positive");
      if (learner->start < Millis{0} || learner->start > duration) fail("learner start outside the session");
    }
    game.validate();
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
    const auto start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != ',') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

} // namespace detail

/// Parses "500", "500ms", "2s", "30min", "2h" into milliseconds.
inline std::optional<Millis> parse_duration(std::string_view s) {
  s = detail::trim(s);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr == s.data()) return std::nullopt;
  const std::string_view unit(ptr, static_cast<std::size_t>(s.data() + s.size() - ptr));
  std::int64_t scale = 0;
  if (unit.empty() || unit == "ms") scale = 1;
  else if (unit == "s") scale = 1000;
  else if (unit == "min") scale = 60'000;
  else if (unit == "h") scale = 3'600'000;
  else return std::nullopt;
  return Millis{value * scale};
}

namespace detail {

class ScenarioReader {
public:
  explicit ScenarioReader(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& why) const { throw ParseError(why, line_); }

  Millis duration(std::string_view s) const {
    auto d = parse_duration(s);
    if (!d) fail("invalid duration '" + std::string(s) + "'");
    return *d;
  }

  double number(std::string_view s) const {
    s = trim(s);
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail("invalid number '" + std::string(s) + "'");
    return v;
  }

  std::uint64_t integer(std::string_view s) const {
    s = trim(s);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail("invalid integer '" + std::string(s) + "'");
    return v;
  }

  bool boolean(std::string_view s) const {
    s = trim(s);
    if (s == "true" || s == "on" || s == "1") return true;
    if (s == "false" || s == "off" || s == "0") return false;
    fail("invalid boolean '" + std::string(s) + "'");
  }

  PlateMask plates(std::string_view s) const {
    // Plate list like "0+1+3".
    PlateMask mask;
    std::size_t i = 0;
    while (i <= s.size()) {
      const auto j = std::min(s.find('+', i), s.size());
      const auto idx = integer(s.substr(i, j - i));
      if (idx >= touch::kPlateCount) fail("plate index out of range");
      mask.set(idx);
      i = j + 1;
    }
    return mask;
  }

private:
  std::size_t line_;
};

} // namespace detail

/// Line-based key/value text. Lists are repeated keys; '#' starts a comment.
///
///   device_id = pocket-01
///   duration = 2h
///   grasp = 0 4s                  # at hold [plates=0+1] [stagger=100ms]
///   noise.blip = 45min 600ms
///   reconnect = 10min 60s
///   learner.skill = 0.4
inline Scenario parse_scenario(std::string_view text) {
  Scenario sc;
  bool have_duration = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    detail::ScenarioReader rd(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) rd.fail("expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (value.empty()) rd.fail("empty value for '" + std::string(key) + "'");

    auto learner = [&]() -> LearnerSpec& {
      if (!sc.learner) sc.learner.emplace();
      return *sc.learner;
    };
    auto pair = [&](std::string_view v) {
      auto parts = detail::split_ws(v);
      if (parts.size() < 2) rd.fail("expected two durations");
      return parts;
    };

    if (key == "device_id") sc.device_id = std::string(value);
    else if (key == "session") sc.session_label = std::string(value);
    else if (key == "duration") {
      sc.duration = rd.duration(value);
      have_duration = true;
    } else if (key == "sample_period") sc.sample_period = rd.duration(value);
    else if (key == "time_scale") sc.time_scale = rd.number(value);
    else if (key == "threshold") sc.threshold = rd.number(value);
    else if (key == "hysteresis") sc.hysteresis = rd.number(value);
    else if (key == "debounce") sc.debounce = rd.boolean(value);
    else if (key == "baseline_level") sc.baseline_level = rd.number(value);
    else if (key == "touch_level") sc.touch_level = rd.number(value);
    else if (key == "jitter") sc.jitter = rd.number(value);
    else if (key == "record") {
      if (value == "grasp") sc.record = RecordLevel::Grasp;
      else if (value == "plate") sc.record = RecordLevel::Plate;
      else if (value == "both") sc.record = RecordLevel::Both;
      else rd.fail("record must be grasp, plate or both");
    } else if (key == "grasp") {
      auto parts = pair(value);
      GraspSpec g{rd.duration(parts[0]), rd.duration(parts[1])};
      for (std::size_t i = 2; i < parts.size(); ++i) {
        const auto kv = parts[i];
        if (kv.starts_with("plates=")) g.plates = rd.plates(kv.substr(7));
        else if (kv.starts_with("stagger=")) g.stagger = rd.duration(kv.substr(8));
        else rd.fail("unknown grasp option '" + std::string(kv) + "'");
      }
      sc.grasps.push_back(g);
    } else if (key == "reconnect") {
      auto parts = pair(value);
      sc.reconnects.push_back({rd.duration(parts[0]), rd.duration(parts[1])});
    } else if (key == "noise.rate_per_hour") sc.noise.rate_per_hour = rd.number(value);
    else if (key == "noise.blip_min") sc.noise.blip_min = rd.duration(value);
    else if (key == "noise.blip_max") sc.noise.blip_max = rd.duration(value);
    else if (key == "noise.blip") {
      auto parts = pair(value);
      sc.noise.scripted.push_back({rd.duration(parts[0]), rd.duration(parts[1])});
    } else if (key == "burst.count") sc.burst.count = rd.integer(value);
    else if (key == "burst.window") sc.burst.window = rd.duration(value);
    else if (key == "burst.hold_min") sc.burst.hold_min = rd.duration(value);
    else if (key == "burst.hold_max") sc.burst.hold_max = rd.duration(value);
    else if (key == "learner.skill") learner().model.skill = rd.number(value);
    else if (key == "learner.learning_rate") learner().model.learning_rate = rd.number(value);
    else if (key == "learner.reaction") learner().model.reaction = rd.duration(value);
    else if (key == "learner.seed") learner().model.seed = rd.integer(value);
    else if (key == "learner.base_sigma") learner().model.base_sigma = rd.number(value);
    else if (key == "learner.visual_attempts") learner().visual_attempts = rd.integer(value);
    else if (key == "learner.max_games") learner().max_games = rd.integer(value);
    else if (key == "learner.start") learner().start = rd.duration(value);
    else if (key == "game.notes") sc.game.notes_per_pattern = rd.integer(value);
    else if (key == "game.note_min") sc.game.note_min = rd.duration(value);
    else if (key == "game.note_max") sc.game.note_max = rd.duration(value);
    else if (key == "game.gap_min") sc.game.gap_min = rd.duration(value);
    else if (key == "game.gap_max") sc.game.gap_max = rd.duration(value);
    else if (key == "game.tolerance") sc.game.tolerance = rd.number(value);
    else if (key == "game.success_buzz") sc.game.success_buzz = rd.duration(value);
    else if (key == "game.idle_end") sc.game.session_idle_end = rd.duration(value);
    else if (key == "game.demo_lead") sc.game.demo_lead = rd.duration(value);
    else rd.fail("unknown key '" + std::string(key) + "'");
  }
  if (!have_duration) throw ParseError("missing required key 'duration'", line_no);
  std::sort(sc.grasps.begin(), sc.grasps.end(), [](const auto& a, const auto& b) { return a.at < b.at; });
  std::sort(sc.noise.scripted.begin(), sc.noise.scripted.end(),
            [](const auto& a, const auto& b) { return a.at < b.at; });
  sc.validate();
  return sc;
}

/// Canonical text of a scenario; parse_scenario(format_scenario(s)) == s.
inline std::string format_scenario(const Scenario& sc) {
  std::ostringstream o;
  auto d = [](Millis m) { return std::to_string(m.count()); };
  auto plates = [](PlateMask m) {
    std::string s;
    for (std::size_t i = 0; i < touch::kPlateCount; ++i)
      if (m[i]) s += (s.empty() ? "" : "+") + std::to_string(i);
    return s;
  };
  o.precision(17);
  o << "device_id = " << sc.device_id << "\n";
  o << "session = " << sc.session_label << "\n";
  o << "duration = " << d(sc.duration) << "\n";
  o << "sample_period = " << d(sc.sample_period) << "\n";
  o << "time_scale = " << sc.time_scale << "\n";
  o << "threshold = " << sc.threshold << "\n";
  o << "hysteresis = " << sc.hysteresis << "\n";
  o << "debounce = " << (sc.debounce ? "true" : "false") << "\n";
  o << "baseline_level = " << sc.baseline_level << "\n";
  o << "touch_level = " << sc.touch_level << "\n";
  o << "jitter = " << sc.jitter << "\n";
  o << "record = " << (sc.record == RecordLevel::Grasp ? "grasp" : sc.record == RecordLevel::Plate ? "plate" : "both")
    << "\n";
  for (const auto& g : sc.grasps)
    o << "grasp = " << d(g.at) << " " << d(g.hold) << " plates=" << plates(g.plates) << " stagger=" << d(g.stagger)
      << "\n";
  for (const auto& r : sc.reconnects) o << "reconnect = " << d(r.at) << " " << d(r.duration) << "\n";
  o << "noise.rate_per_hour = " << sc.noise.rate_per_hour << "\n";
  o << "noise.blip_min = " << d(sc.noise.blip_min) << "\n";
  o << "noise.blip_max = " << d(sc.noise.blip_max) << "\n";
  for (const auto& b : sc.noise.scripted) o << "noise.blip = " << d(b.at) << " " << d(b.duration) << "\n";
  o << "burst.count = " << sc.burst.count << "\n";
  o << "burst.window = " << d(sc.burst.window) << "\n";
  o << "burst.hold_min = " << d(sc.burst.hold_min) << "\n";
  o << "burst.hold_max = " << d(sc.burst.hold_max) << "\n";
  if (sc.learner) {
    const auto& l = *sc.learner;
    o << "learner.skill = " << l.model.skill << "\n";
    o << "learner.learning_rate = " << l.model.learning_rate << "\n";
    o << "learner.reaction = " << d(l.model.reaction) << "\n";
    if (l.model.seed) o << "learner.seed = " << *l.model.seed << "\n";
    o << "learner.base_sigma = " << l.model.base_sigma << "\n";
    if (l.visual_attempts) o << "learner.visual_attempts = " << *l.visual_attempts << "\n";
    o << "learner.max_games = " << l.max_games << "\n";
    o << "learner.start = " << d(l.start) << "\n";
  }
  const auto& g = sc.game;
  o << "game.notes = " << g.notes_per_pattern << "\n";
  o << "game.note_min = " << d(g.note_min) << "\n";
  o << "game.note_max = " << d(g.note_max) << "\n";
  o << "game.gap_min = " << d(g.gap_min) << "\n";
  o << "game.gap_max = " << d(g.gap_max) << "\n";
  o << "game.tolerance = " << g.tolerance << "\n";
  o << "game.success_buzz = " << d(g.success_buzz) << "\n";
  o << "game.idle_end = " << d(g.session_idle_end) << "\n";
  o << "game.demo_lead = " << d(g.demo_lead) << "\n";
  return o.str();
}

inline std::uint64_t scenario_hash(const Scenario& sc) { return fnv1a64(format_scenario(sc)); }

} // namespace pocket::sim
