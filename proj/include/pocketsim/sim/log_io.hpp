// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pocketsim/core/error.hpp"
#include "pocketsim/sim/device.hpp"

namespace pocket::sim {

using nlohmann::json;

inline json config_json(const rhythm::GameConfig& c) {
  return {{"notes_per_pattern", c.notes_per_pattern},
          {"note_min", c.note_min.count()},
          {"note_max", c.note_max.count()},
          {"gap_min", c.gap_min.count()},
          {"gap_max", c.gap_max.count()},
          {"tolerance", c.tolerance},
          {"actuator_floor", c.actuator_floor.count()},
          {"success_buzz", c.success_buzz.count()},
          {"session_idle_end", c.session_idle_end.count()},
          {"tick", c.tick.count()},
          {"demo_lead", c.demo_lead.count()},
          {"abandon_gap_factor", c.abandon_gap_factor}};
}

inline rhythm::GameConfig config_from_json(const json& j) {
  rhythm::GameConfig c;
  c.notes_per_pattern = j.at("notes_per_pattern").get<std::size_t>();
  c.note_min = Millis{j.at("note_min").get<std::int64_t>()};
  c.note_max = Millis{j.at("note_max").get<std::int64_t>()};
  c.gap_min = Millis{j.at("gap_min").get<std::int64_t>()};
  c.gap_max = Millis{j.at("gap_max").get<std::int64_t>()};
  c.tolerance = j.at("tolerance").get<double>();
  c.actuator_floor = Millis{j.at("actuator_floor").get<std::int64_t>()};
  c.success_buzz = Millis{j.at("success_buzz").get<std::int64_t>()};
  c.session_idle_end = Millis{j.at("session_idle_end").get<std::int64_t>()};
  c.tick = Millis{j.at("tick").get<std::int64_t>()};
  c.demo_lead = Millis{j.at("demo_lead").get<std::int64_t>()};
  c.abandon_gap_factor = j.at("abandon_gap_factor").get<double>();
  c.validate();
  return c;
}

/// Seeds are written as decimal strings: JSON readers elsewhere may not
/// keep 64-bit integers exact.
inline json meta_json(const SessionMeta& m) {
  json windows = json::array();
  for (auto w : m.windows) windows.push_back(w.count());
  json outages = json::array();
  for (const auto& o : m.outages) outages.push_back({{"at", o.at.count()}, {"duration", o.duration.count()}});
  json j = {{"scenario_hash", std::to_string(m.scenario_hash)},
            {"seeds",
             {{"master", std::to_string(m.seeds.master)},
              {"pattern", std::to_string(m.seeds.pattern)},
              {"noise", std::to_string(m.seeds.noise)},
              {"burst", std::to_string(m.seeds.burst)},
              {"learner", std::to_string(m.seeds.learner)},
              {"sensor", std::to_string(m.seeds.sensor)}}},
            {"game", config_json(m.game)},
            {"windows", windows},
            {"outages", outages},
            {"absorbed_blips", m.absorbed_blips},
            {"injected_blips", m.injected_blips},
            {"ended_at", m.ended_at.count()}};
  j["visual_attempts"] = m.visual_attempts ? json(*m.visual_attempts) : json(nullptr);
  return j;
}

inline SessionMeta meta_from_json(const json& j) {
  auto u64 = [](const json& v) { return static_cast<std::uint64_t>(std::stoull(v.get<std::string>())); };
  try {
    SessionMeta m;
    m.scenario_hash = u64(j.at("scenario_hash"));
    const auto& s = j.at("seeds");
    m.seeds = {u64(s.at("master")), u64(s.at("pattern")), u64(s.at("noise")),
               u64(s.at("burst")),  u64(s.at("learner")), u64(s.at("sensor"))};
    m.game = config_from_json(j.at("game"));
    for (const auto& w : j.at("windows")) m.windows.push_back(Millis{w.get<std::int64_t>()});
    for (const auto& o : j.at("outages"))
      m.outages.push_back({Millis{o.at("at").get<std::int64_t>()}, Millis{o.at("duration").get<std::int64_t>()}});
    m.absorbed_blips = j.at("absorbed_blips").get<std::size_t>();
    m.injected_blips = j.at("injected_blips").get<std::size_t>();
    m.ended_at = Millis{j.at("ended_at").get<std::int64_t>()};
    if (!j.at("visual_attempts").is_null()) m.visual_attempts = j.at("visual_attempts").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw DecodeError(std::string("session meta: ") + e.what(), 0);
  } catch (const std::logic_error& e) {
    throw DecodeError(std::string("session meta: ") + e.what(), 0);
  }
}

/// Session meta as stored server-side; enough to replay the games.
inline json session_meta_json(const SessionLog& log) {
  return {{"device_id", log.device_id}, {"sim", meta_json(log.meta)}};
}

inline std::filesystem::path meta_path(const std::filesystem::path& log_path) {
  auto p = log_path;
  p += ".meta.json";
  return p;
}

/// Writes the records as JSON lines plus a sidecar with ids and meta.
inline void write_log(const SessionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const auto& r : log.events) out << telemetry::encode_record(r);
  std::ofstream meta(meta_path(path), std::ios::binary | std::ios::trunc);
  if (!meta) throw UsageError("cannot write " + meta_path(path).string());
  json side = {{"device_id", log.device_id}, {"session_id", log.session_id}, {"meta", meta_json(log.meta)}};
  meta << side.dump(2) << '\n';
  if (!out || !meta) throw UsageError("short write to " + path.string());
}

/// Reads a log written by write_log. Outcomes are recomputed by replay;
/// effects are not kept.
inline SessionLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  SessionLog log;
  telemetry::LineFramer framer;
  framer.feed(text);
  std::size_t offset = 0;
  std::size_t line_no = 0;
  while (auto line = framer.next()) {
    ++line_no;
    if (line->overlong) throw DecodeError("line " + std::to_string(line_no) + " too long", offset);
    try {
      log.events.push_back(telemetry::decode_record(line->bytes));
    } catch (const DecodeError& e) {
      throw DecodeError("line " + std::to_string(line_no) + " malformed", offset + e.offset());
    }
    offset += line->bytes.size();
  }
  if (framer.pending() > 0) throw DecodeError("truncated final line", offset);

  std::ifstream meta_in(meta_path(path), std::ios::binary);
  if (!meta_in) throw UsageError("missing " + meta_path(path).string());
  json side;
  try {
    side = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw DecodeError(std::string("session meta: ") + e.what(), 0);
  }
  log.device_id = side.value("device_id", "");
  log.session_id = side.value("session_id", "");
  log.meta = meta_from_json(side.at("meta"));
  log.outcomes = replay_outcomes(log);
  return log;
}

} // namespace pocket::sim
