// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "pocketsim/core/random.hpp"
#include "pocketsim/touch/calibrate.hpp"
#include "pocketsim/touch/durations.hpp"
#include "pocketsim/touch/pipeline.hpp"

using namespace pocket;
using namespace pocket::touch;

TEST(Classify, MatchesSchmittTriggerByHand) {
  // Threshold 50, hysteresis 5: touch below 50, release at 55 or above.
  const double values[] = {60, 50, 49.99, 40, 54.99, 55, 49, 100, 0};
  const bool expect_touched[] = {false, false, true, true, true, false, true, false, true};
  PlateState s = initial_plates()[2];
  for (std::size_t i = 0; i < std::size(values); ++i) {
    const bool was = s.touched;
    s = classify(s, {2, values[i], Millis{static_cast<long>(i)}}, 50.0, 5.0);
    ASSERT_EQ(s.touched, expect_touched[i]) << "sample " << i;
    const PlateReading r = was == s.touched ? PlateReading::NotChanged
                           : s.touched      ? PlateReading::Touched
                                            : PlateReading::Released;
    ASSERT_EQ(s.reading, r);
    if (r != PlateReading::NotChanged) {
      ASSERT_EQ(s.since, Millis{static_cast<long>(i)});
    }
  }
}

TEST(Classify, BruteForceOverValueGrid) {
  for (int thr = 1; thr < 100; thr += 7) {
    for (int v = 0; v <= 100; ++v) {
      for (bool touched : {false, true}) {
        PlateState prev = initial_plates()[0];
        prev.touched = touched;
        const auto next = classify(prev, {0, double(v), Millis{5}}, thr, 3.0);
        const bool want = touched ? v < thr + 3 : v < thr;
        ASSERT_EQ(next.touched, want) << v << " vs " << thr;
      }
    }
  }
}

TEST(Classify, Errors) {
  const PlateState p = initial_plates()[1];
  EXPECT_THROW(classify(p, {2, 40, Millis{0}}, 50), RoutingError);
  EXPECT_THROW(classify(p, {1, 140, Millis{0}}, 50), DomainError);
  EXPECT_THROW(classify(p, {1, -1, Millis{0}}, 50), DomainError);
  EXPECT_THROW(classify(p, {1, 40, Millis{0}}, 0), ConfigError);
  EXPECT_THROW(classify(p, {1, 40, Millis{0}}, 100), ConfigError);
}

TEST(Fuse, RandomWalksEmitPressOnLeavingZeroAndReleaseOnReturning) {
  Rng rng(77);
  PipelineConfig cfg;
  cfg.debounce = false;
  TouchPipeline pipe(cfg);
  std::array<bool, kPlateCount> level{};
  bool any = false;
  for (int i = 0; i < 100'000; ++i) {
    const auto plate = static_cast<std::size_t>(rng.uniform_int(0, kPlateCount - 1));
    const bool touch = rng.uniform01() < 0.3;
    const auto out = pipe.push({plate, touch ? 20.0 : 80.0, Millis{i}});
    level[plate] = touch;
    const bool now_any = std::any_of(level.begin(), level.end(), [](bool b) { return b; });
    if (now_any == any) {
      ASSERT_TRUE(out.grasps.empty()) << "step " << i;
    } else {
      ASSERT_EQ(out.grasps.size(), 1u);
      EXPECT_EQ(out.grasps[0].kind, now_any ? GraspKind::Press : GraspKind::Release);
      EXPECT_EQ(out.grasps[0].ts, Millis{i});
      for (std::size_t p = 0; p < kPlateCount; ++p) EXPECT_EQ(out.grasps[0].active_plates[p], level[p]);
    }
    any = now_any;
  }
}

namespace {

std::vector<GraspEvent> feed(TouchPipeline& pipe, const std::vector<std::pair<long, bool>>& plate0) {
  PipelineOutput out;
  for (const auto& [t, touch] : plate0) pipe.push({0, touch ? 10.0 : 90.0, Millis{t}}, out);
  return out.grasps;
}

} // namespace

TEST(Debounce, ShortBlipIsAbsorbedWithItsRelease) {
  TouchPipeline pipe;  // 100 ms period, 2 periods
  const auto g = feed(pipe, {{0, false}, {100, true}, {200, false}, {300, false}});
  EXPECT_TRUE(g.empty());
  EXPECT_EQ(pipe.absorbed(), 1u);
}

TEST(Debounce, PressLastingTheWindowIsKept) {
  TouchPipeline pipe;
  const auto g = feed(pipe, {{100, true}, {200, true}, {300, false}});
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].kind, GraspKind::Press);
  EXPECT_EQ(g[0].ts, Millis{100});
  EXPECT_EQ(g[1].kind, GraspKind::Release);
  EXPECT_EQ(g[1].ts, Millis{300});
}

TEST(Debounce, PendingPressConfirmedByTimeAlone) {
  TouchPipeline pipe;
  PipelineOutput out;
  pipe.push({0, 10.0, Millis{100}}, out);
  EXPECT_EQ(pipe.pending_confirmation(), Millis{300});
  EXPECT_EQ(pipe.safe_horizon(Millis{250}), Millis{100});
  pipe.advance(Millis{299}, out);
  EXPECT_TRUE(out.grasps.empty());
  pipe.advance(Millis{300}, out);
  ASSERT_EQ(out.grasps.size(), 1u);
  EXPECT_EQ(out.grasps[0].ts, Millis{100});
  EXPECT_FALSE(pipe.pending_confirmation());
}

TEST(Debounce, DisabledPassesEverything) {
  PipelineConfig cfg;
  cfg.debounce = false;
  TouchPipeline pipe(cfg);
  const auto g = feed(pipe, {{0, true}, {10, false}});
  EXPECT_EQ(g.size(), 2u);
}

TEST(Pipeline, DeterministicFold) {
  Rng rng(5);
  std::vector<CapacitanceSample> samples;
  for (int i = 0; i < 5000; ++i)
    samples.push_back({static_cast<std::size_t>(rng.uniform_int(0, 4)), rng.uniform01() * 100.0, Millis{i * 10}});
  auto run = [&] {
    TouchPipeline p;
    PipelineOutput out;
    for (const auto& s : samples) p.push(s, out);
    return out;
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.grasps, b.grasps);
  EXPECT_EQ(a.transitions, b.transitions);
}

TEST(Pipeline, RejectsBadConfigAndRouting) {
  PipelineConfig cfg;
  cfg.thresholds[3] = 0.0;
  EXPECT_THROW(TouchPipeline{cfg}, ConfigError);
  cfg = {};
  cfg.sample_period = Millis{0};
  EXPECT_THROW(TouchPipeline{cfg}, ConfigError);
  TouchPipeline p;
  EXPECT_THROW(p.push({5, 50.0, Millis{0}}), RoutingError);
}

namespace {

std::vector<CapacitanceSample> baseline(Rng& rng, double mean, double sd, std::size_t n) {
  std::vector<CapacitanceSample> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < kPlateCount; ++p)
      out.push_back({p, std::clamp(rng.normal(mean, sd), 0.0, 100.0), Millis{static_cast<long>(i * 100)}});
  return out;
}

} // namespace

TEST(Calibrate, ConstantBaselineFallsBackToFraction) {
  std::vector<CapacitanceSample> s;
  for (int i = 0; i < 100; ++i)
    for (std::size_t p = 0; p < kPlateCount; ++p) s.push_back({p, 80.0, Millis{i}});
  const auto cal = calibrate(s);
  for (std::size_t p = 0; p < kPlateCount; ++p) {
    EXPECT_DOUBLE_EQ(cal.thresholds[p], 60.0);
    EXPECT_TRUE(cal.degenerate[p]);
  }
}

TEST(Calibrate, NoisyBaselineMeanMinusThreeSigma) {
  Rng rng(11);
  const auto cal = calibrate(baseline(rng, 80.0, 5.0, 20'000));
  // The MAD filter trims beyond 3 sigma, shrinking the sd slightly.
  for (double t : cal.thresholds) EXPECT_NEAR(t, 65.0, 1.0);
}

TEST(Calibrate, InjectedTouchesAreFiltered) {
  Rng rng(12);
  auto s = baseline(rng, 80.0, 5.0, 2000);
  Rng clean_rng(12);
  const auto clean = calibrate(baseline(clean_rng, 80.0, 5.0, 2000));
  // 5% of samples are fingers at ~15.
  for (auto& x : s)
    if (rng.uniform01() < 0.05) x.value = std::clamp(rng.normal(15.0, 3.0), 0.0, 100.0);
  const auto cal = calibrate(s);
  for (std::size_t p = 0; p < kPlateCount; ++p) {
    EXPECT_NEAR(cal.thresholds[p], clean.thresholds[p], 2.0);
    EXPECT_GT(cal.rejected[p], 50u);
  }
}

TEST(Calibrate, ClampsAndRejectsShortBaselines) {
  Rng rng(3);
  const auto low = calibrate(baseline(rng, 10.0, 4.0, 200));
  for (double t : low.thresholds) EXPECT_DOUBLE_EQ(t, 5.0);
  std::vector<CapacitanceSample> s;
  for (int i = 0; i < 49; ++i)
    for (std::size_t p = 0; p < kPlateCount; ++p) s.push_back({p, 80.0, Millis{i}});
  EXPECT_THROW(calibrate(s), CalibrationError);
  s.push_back({7, 80.0, Millis{0}});
  EXPECT_THROW(calibrate(s), RoutingError);
}

TEST(Durations, PairsPressesWithReleases) {
  const std::vector<GraspEvent> ev = {{GraspKind::Press, Millis{100}, {}},
                                      {GraspKind::Release, Millis{450}, {}},
                                      {GraspKind::Press, Millis{900}, {}},
                                      {GraspKind::Release, Millis{1000}, {}},
                                      {GraspKind::Press, Millis{1200}, {}}};
  const auto d = touch_durations(ev);
  EXPECT_EQ(d.closed, (std::vector<Millis>{Millis{350}, Millis{100}}));
  EXPECT_EQ(d.open_press, Millis{1200});
}

TEST(Durations, ProtocolErrors) {
  EXPECT_THROW(touch_durations(std::vector<GraspEvent>{{GraspKind::Release, Millis{1}, {}}}), ProtocolError);
  EXPECT_THROW(touch_durations(std::vector<GraspEvent>{{GraspKind::Press, Millis{1}, {}},
                                                       {GraspKind::Press, Millis{2}, {}}}),
               ProtocolError);
}
