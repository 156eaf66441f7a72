// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "pocketsim/analysis/store_reports.hpp"
#include "pocketsim/sim/cohort.hpp"
#include "pocketsim/telemetry/ingest.hpp"
#include "temp_dir.hpp"

using namespace pocket;
using namespace pocket::analysis;
using telemetry::EventKind;

namespace {

EventRecord touch_at(std::int64_t ts, std::optional<std::uint8_t> plate = {}, EventKind kind = EventKind::Touch) {
  static std::uint64_t seq = 0;
  return {{++seq, "d", ts, plate, kind, std::nullopt}, "s", std::nullopt};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<sim::GameOutcome> outcomes(std::initializer_list<std::size_t> attempts) {
  std::vector<sim::GameOutcome> out;
  std::size_t n = 0;
  for (auto a : attempts) out.push_back({++n, a, 0.0, rhythm::Mode::Visual});
  return out;
}

} // namespace

TEST(NearestWindow, TiesAndTolerance) {
  const std::vector<std::int64_t> w = {0, 100, 100, 300};
  EXPECT_EQ(nearest_window(w, 50, 60), 0u);   // tie: earlier window
  EXPECT_EQ(nearest_window(w, 120, 60), 1u);  // duplicate starts: first of the run
  EXPECT_EQ(nearest_window(w, 200, 100), 1u);
  EXPECT_EQ(nearest_window(w, 201, 100), 3u);
  EXPECT_EQ(nearest_window(w, 400, 100), 3u);
  EXPECT_FALSE(nearest_window(w, 401, 100));
  EXPECT_FALSE(nearest_window(w, -61, 60));
  EXPECT_FALSE(nearest_window(std::vector<std::int64_t>{}, 5, 100));
}

TEST(NearestWindow, AgreesWithBruteForce) {
  Rng rng(21);
  for (int round = 0; round < 2000; ++round) {
    std::vector<std::int64_t> w(static_cast<std::size_t>(rng.uniform_int(0, 8)));
    for (auto& x : w) x = rng.uniform_int(0, 50) * 20;
    std::sort(w.begin(), w.end());
    const std::int64_t tol = rng.uniform_int(0, 300);
    for (int k = 0; k < 20; ++k) {
      const std::int64_t ts = rng.uniform_int(-200, 1200);
      std::optional<std::size_t> want;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const auto d = std::abs(w[i] - ts);
        if (d <= tol && (!want || d < std::abs(w[*want] - ts))) want = i;
      }
      ASSERT_EQ(nearest_window(w, ts, tol), want) << "ts " << ts << " tol " << tol;
    }
  }
}

TEST(WindowReport, CountsByModeAndIgnoresReleases) {
  const std::vector<EventRecord> ev = {touch_at(1000), touch_at(1000, 0), touch_at(1000, 1),
                                       touch_at(5000, {}, EventKind::Release), touch_at(400'000), touch_at(602'000)};
  const auto g = grasp_window_report(ev, {600'000, 0});
  EXPECT_EQ(g.window_starts, (std::vector<std::int64_t>{0, 600'000}));
  EXPECT_EQ(g.events_per_window, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(g.off_window_events, 1u);
  const auto p = grasp_window_report(ev, {0, 600'000}, kDefaultWindowTolerance, Counting::Plate, 3);
  EXPECT_EQ(p.events_per_window, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(p.off_window_events, 0u);
  EXPECT_EQ(p.reconnects, 3u);
  EXPECT_THROW(grasp_window_report(ev, {}, -1), UsageError);
  EXPECT_THROW(parse_counting("blip"), UsageError);
}

TEST(WindowReport, NoEventsAllZero) {
  const auto r = grasp_window_report({}, {0, 10});
  EXPECT_EQ(r.events_per_window, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(r.total(), 0u);
}

TEST(WindowReport, TotalsEqualTouchCount) {
  Rng rng(4);
  std::vector<EventRecord> ev;
  for (int i = 0; i < 500; ++i)
    ev.push_back(touch_at(rng.uniform_int(0, 10'000'000), std::nullopt,
                          rng.uniform01() < 0.5 ? EventKind::Touch : EventKind::Release));
  const auto n = std::count_if(ev.begin(), ev.end(), [](const auto& e) { return counts(e, Counting::Grasp); });
  EXPECT_EQ(grasp_window_report(ev, {0, 1'000'000, 5'000'000}).total(), static_cast<std::size_t>(n));
}

TEST(Moments, MatchOnePassReference) {
  Rng rng(8);
  for (int round = 0; round < 200; ++round) {
    std::vector<double> xs(static_cast<std::size_t>(rng.uniform_int(1, 40)));
    for (auto& x : xs) x = rng.normal(20.0, 5.0);
    // Welford.
    double mean = 0, m2 = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = xs[i] - mean;
      mean += d / static_cast<double>(i + 1);
      m2 += d * (xs[i] - mean);
    }
    const auto m = moments(xs);
    EXPECT_NEAR(m.mean, mean, 1e-9);
    if (xs.size() > 1) {
      ASSERT_TRUE(m.sample_stdev);
      EXPECT_NEAR(*m.sample_stdev, std::sqrt(m2 / static_cast<double>(xs.size() - 1)), 1e-9);
    } else {
      EXPECT_FALSE(m.sample_stdev);
    }
  }
}

TEST(LearningCurve, TwoLogsByHand) {
  const std::vector<std::vector<sim::GameOutcome>> c = {outcomes({3, 2}), outcomes({5})};
  const auto curve = learning_curve(c);
  ASSERT_EQ(curve.points.size(), 2u);
  EXPECT_DOUBLE_EQ(curve.points[0].mean_attempts, 4.0);
  EXPECT_DOUBLE_EQ(*curve.points[0].stdev_attempts, std::sqrt(2.0));
  EXPECT_EQ(curve.points[0].n, 2u);
  EXPECT_DOUBLE_EQ(curve.points[1].mean_attempts, 2.0);
  EXPECT_FALSE(curve.points[1].stdev_attempts);
  EXPECT_THROW(learning_curve(std::span<const std::vector<sim::GameOutcome>>{}), DomainError);
}

TEST(LearningCurve, PerfectPlayersNeedOneAttempt) {
  sim::CohortSpec spec;
  spec.children = 4;
  spec.games = 3;
  spec.skill_min = spec.skill_max = 1.0;
  const auto logs = sim::run_cohort(spec, 2);
  const auto curve = learning_curve(logs);
  ASSERT_EQ(curve.points.size(), 3u);
  for (const auto& p : curve.points) {
    EXPECT_DOUBLE_EQ(p.mean_attempts, 1.0);
    EXPECT_DOUBLE_EQ(*p.stdev_attempts, 0.0);
  }
}

TEST(LearningCurve, DefaultCohortEndsBelowWhereItStarts) {
  // Strict game-by-game monotonicity is an acceptance check; here only the
  // overall trend is pinned.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto curve = learning_curve(sim::run_cohort({}, seed));
    ASSERT_EQ(curve.points.size(), 7u);
    EXPECT_LT(curve.points.back().mean_attempts, curve.points.front().mean_attempts) << seed;
    EXPECT_LT(*curve.points.back().stdev_attempts, *curve.points.front().stdev_attempts) << seed;
  }
}

TEST(Precision, HandComputedPerPhase) {
  std::vector<std::vector<sim::GameOutcome>> c(2);
  c[0] = {{1, 1, 10.0, rhythm::Mode::Visual}, {2, 1, 30.0, rhythm::Mode::Concealed}};
  c[1] = {{1, 2, 20.0, rhythm::Mode::Visual}};
  const auto v = precision_stats(c, rhythm::Mode::Visual);
  EXPECT_EQ(v.phase, "Visual");
  EXPECT_DOUBLE_EQ(v.mean_pct, 15.0);
  EXPECT_NEAR(*v.stdev_pct, std::sqrt(50.0), 1e-12);
  const auto all = precision_stats(c, std::nullopt);
  EXPECT_DOUBLE_EQ(all.mean_pct, 20.0);
  EXPECT_DOUBLE_EQ(*all.stdev_pct, 10.0);
  EXPECT_EQ(all.n, 3u);
  EXPECT_THROW(precision_stats(c, rhythm::Mode::Blindfolded), DomainError);
  const auto table = precision_table(c);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[1].phase, "Concealed");
  EXPECT_FALSE(table[1].stdev_pct);
}

TEST(Precision, ZeroErrorsGiveZero) {
  std::vector<std::vector<sim::GameOutcome>> c = {outcomes({1, 1}), outcomes({1})};
  const auto s = precision_stats(c, std::nullopt);
  EXPECT_DOUBLE_EQ(s.mean_pct, 0.0);
  EXPECT_DOUBLE_EQ(*s.stdev_pct, 0.0);
}

TEST(Precision, DefaultCohortLandsInBand) {
  double sum = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto logs = sim::run_cohort({}, seed);
    std::vector<std::vector<sim::GameOutcome>> c;
    for (const auto& l : logs) c.push_back(l.outcomes);
    sum += precision_stats(c, std::nullopt).mean_pct;
  }
  const double mean = sum / 20;
  EXPECT_GE(mean, 15.0);
  EXPECT_LE(mean, 28.0);
}

TEST(Csv, QuotingRoundTrips) {
  Table t{{"a", "b,c", "d"}, {{"x\"y", "line\nbreak", ""}, {"1", "2", "cr\r"}}};
  const auto csv = to_csv(t);
  EXPECT_EQ(csv.substr(0, 13), "a,\"b,c\",d\r\n\"x");
  const auto rows = parse_csv(csv);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], t.columns);
  EXPECT_EQ(rows[1], t.rows[0]);
  EXPECT_EQ(rows[2], t.rows[1]);
  EXPECT_THROW(parse_csv("a,\"b\r\n"), ParseError);
  EXPECT_EQ(parse_csv("a,b\nc,d"), (std::vector<std::vector<std::string>>{{"a", "b"}, {"c", "d"}}));
}

TEST(Csv, EmptyReportIsHeaderOnly) {
  EXPECT_EQ(export_report(GraspWindowReport{}, "csv"), "row,window_start_ms,events\r\n");
  EXPECT_EQ(export_report(LearningCurve{}, "csv"), "game,mean_attempts,stdev_attempts,n\r\n");
  EXPECT_THROW(export_report(LearningCurve{}, "xml"), UsageError);
}

TEST(Csv, TextTableAligns) {
  LearningCurve c{{{1, 2.5, 0.5, 18}, {2, 10.0, std::nullopt, 1}}};
  EXPECT_EQ(export_report(c, "table"),
            "game  mean_attempts  stdev_attempts  n\n"
            "----  -------------  --------------  --\n"
            "   1         2.5000          0.5000  18\n"
            "   2        10.0000               -   1\n");
}

namespace {

sim::Scenario table_one_file() {
  return sim::parse_scenario(slurp(std::string(POCKETSIM_TEST_DATA) + "/table_one.scenario"));
}

} // namespace

TEST(StoreReports, TableOneThroughTheRelay) {
  test::TempDir dir;
  telemetry::EventStore store(dir.path / "events.db");
  telemetry::IngestService ingest(store, [] { return std::int64_t{0}; });
  telemetry::InProcessSink sink(ingest);
  const auto sc = table_one_file();
  const auto log = sim::run_scenario(sc, 1);
  store.create_session(log.session_id, 0, sim::session_meta_json(log));
  const auto frames = sim::frames_of(log);
  const auto stats = telemetry::relay_frames(frames, sc.reconnects, log.session_id, sink);
  EXPECT_EQ(stats.reconnects, 4u);
  EXPECT_EQ(stats.drops, 0u);
  EXPECT_EQ(store.query(log.session_id).size(), frames.size());

  const auto report = window_report_from_store(store, log.session_id);
  EXPECT_EQ(report.events_per_window, (std::vector<std::size_t>{1, 1, 1, 1}));
  EXPECT_EQ(report.off_window_events, 2u);
  EXPECT_EQ(report.reconnects, 4u);
  EXPECT_EQ(export_report(report, "csv"), slurp(std::string(POCKETSIM_TEST_DATA) + "/table_one_windows.csv"));

  const auto plates = window_report_from_store(store, log.session_id, std::nullopt, kDefaultWindowTolerance,
                                               Counting::Plate);
  EXPECT_EQ(plates.events_per_window, (std::vector<std::size_t>{1, 2, 1, 3}));
  EXPECT_EQ(plates.off_window_events, 2u);

  EXPECT_THROW(window_report_from_store(store, "nope"), NotFoundError);
  store.create_session("bare", 0);
  EXPECT_THROW(window_report_from_store(store, "bare"), UsageError);
}

TEST(StoreReports, CohortOutcomesSurviveStorage) {
  test::TempDir dir;
  telemetry::EventStore store(dir.path / "events.db");
  telemetry::IngestService ingest(store, [] { return std::int64_t{0}; });
  telemetry::InProcessSink sink(ingest);
  sim::CohortSpec spec;
  spec.children = 4;
  spec.games = 3;
  spec.visual_attempts = 2;
  const auto logs = sim::run_cohort(spec, 9);
  std::vector<std::string> ids;
  for (const auto& log : logs) {
    store.create_session(log.session_id, 0, sim::session_meta_json(log));
    telemetry::relay_frames(sim::frames_of(log), {}, log.session_id, sink);
    ids.push_back(log.session_id);
  }
  const auto stored = cohort_from_store(store, ids);
  for (std::size_t i = 0; i < logs.size(); ++i) EXPECT_EQ(stored[i], logs[i].outcomes);
  EXPECT_EQ(export_report(learning_curve(stored), "csv"), export_report(learning_curve(logs), "csv"));
}

TEST(Golden, CohortCurveCsv) {
  sim::CohortSpec spec;
  spec.children = 6;
  spec.games = 4;
  const auto csv = export_report(learning_curve(sim::run_cohort(spec, 7)), "csv");
  EXPECT_EQ(csv, slurp(std::string(POCKETSIM_TEST_DATA) + "/cohort_seed7_curve.csv"));
}
