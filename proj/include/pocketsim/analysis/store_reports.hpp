// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pocketsim/analysis/report.hpp"
#include "pocketsim/sim/log_io.hpp"
#include "pocketsim/telemetry/store.hpp"

namespace pocket::analysis {

inline std::uint64_t session_reconnects(const telemetry::EventStore& store, const std::string& session) {
  std::uint64_t n = 0;
  for (const auto& [_, r] : store.reconnects(session)) n += r;
  return n;
}

inline sim::SessionMeta stored_sim_meta(const telemetry::EventStore& store, const std::string& session) {
  const auto meta = store.session_meta(session);
  if (!meta.contains("sim")) throw UsageError("session '" + session + "' has no simulation meta");
  return sim::meta_from_json(meta.at("sim"));
}

/// Windows default to the instructed grasps recorded with the session.
inline GraspWindowReport window_report_from_store(const telemetry::EventStore& store, const std::string& session,
                                                  std::optional<std::vector<std::int64_t>> windows = {},
                                                  std::int64_t tolerance_ms = kDefaultWindowTolerance,
                                                  Counting mode = Counting::Grasp) {
  const auto events = store.query(session);
  if (!windows) {
    windows.emplace();
    for (auto w : stored_sim_meta(store, session).windows) windows->push_back(w.count());
  }
  return grasp_window_report(events, *windows, tolerance_ms, mode, session_reconnects(store, session));
}

/// Game outcomes of a stored session, recomputed from its grasp records.
inline std::vector<sim::GameOutcome> outcomes_from_store(const telemetry::EventStore& store,
                                                         const std::string& session) {
  const auto meta = stored_sim_meta(store, session);
  const auto events = store.query(session);
  return sim::replay_outcomes(events, meta.game, meta.seeds.pattern, meta.visual_attempts);
}

inline std::vector<std::vector<sim::GameOutcome>> cohort_from_store(const telemetry::EventStore& store,
                                                                    const std::vector<std::string>& sessions) {
  std::vector<std::vector<sim::GameOutcome>> out;
  for (const auto& s : sessions) out.push_back(outcomes_from_store(store, s));
  return out;
}

/// One row per phase that has completed games, then the overall row.
inline std::vector<PrecisionStats> precision_table(std::span<const std::vector<sim::GameOutcome>> cohort) {
  std::vector<PrecisionStats> rows;
  for (auto m : {rhythm::Mode::Visual, rhythm::Mode::Blindfolded, rhythm::Mode::Concealed}) {
    try {
      rows.push_back(precision_stats(cohort, m));
    } catch (const DomainError&) {
    }
  }
  rows.push_back(precision_stats(cohort, std::nullopt));
  return rows;
}

} // namespace pocket::analysis
