// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <optional>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pocketsim/core/error.hpp"
#include "pocketsim/sim/device.hpp"
#include "pocketsim/telemetry/frame.hpp"

namespace pocket::analysis {

using telemetry::EventRecord;

/// Which stored records count as one event.
enum class Counting {
  /// Device-level touch records: one per grasp.
  Grasp,
  /// Per-plate touch records: a two-plate grasp counts twice.
  Plate,
};

inline Counting parse_counting(std::string_view s) {
  if (s == "grasp") return Counting::Grasp;
  if (s == "plate") return Counting::Plate;
  throw UsageError("unknown counting '" + std::string(s) + "' (grasp|plate)");
}

inline bool counts(const EventRecord& r, Counting mode) {
  if (r.frame.event != telemetry::EventKind::Touch) return false;
  return mode == Counting::Grasp ? r.frame.device_level() : !r.frame.device_level();
}

inline constexpr std::int64_t kDefaultWindowTolerance = 120'000;

struct GraspWindowReport {
  std::vector<std::int64_t> window_starts;
  std::vector<std::size_t> events_per_window;
  /// False-positive candidates: events near no instructed grasp.
  std::size_t off_window_events = 0;
  std::uint64_t reconnects = 0;

  std::size_t total() const {
    std::size_t n = off_window_events;
    for (auto c : events_per_window) n += c;
    return n;
  }

  bool operator==(const GraspWindowReport&) const = default;
};

/// Index of the window nearest to `ts` within tolerance; ties go to the
/// earlier window. `windows` must be sorted.
inline std::optional<std::size_t> nearest_window(std::span<const std::int64_t> windows, std::int64_t ts,
                                                 std::int64_t tolerance_ms) {
  auto it = std::lower_bound(windows.begin(), windows.end(), ts);
  std::optional<std::size_t> best;
  std::int64_t best_d = 0;
  auto consider = [&](decltype(it) c) {
    const std::int64_t d = std::abs(*c - ts);
    if (d > tolerance_ms) return;
    const auto idx = static_cast<std::size_t>(c - windows.begin());
    if (!best || d < best_d || (d == best_d && idx < *best)) {
      best = idx;
      best_d = d;
    }
  };
  if (it != windows.begin()) {
    // Equal starts: take the first of the run.
    auto prev = std::prev(it);
    while (prev != windows.begin() && *std::prev(prev) == *prev) --prev;
    consider(prev);
  }
  if (it != windows.end()) consider(it);
  return best;
}

/// Events are counted per `mode`; others are ignored.
inline GraspWindowReport grasp_window_report(std::span<const EventRecord> events, std::vector<std::int64_t> windows,
                                             std::int64_t tolerance_ms = kDefaultWindowTolerance,
                                             Counting mode = Counting::Grasp, std::uint64_t reconnects = 0) {
  if (tolerance_ms < 0) throw UsageError("tolerance must be non-negative");
  std::sort(windows.begin(), windows.end());
  GraspWindowReport r;
  r.window_starts = windows;
  r.events_per_window.assign(windows.size(), 0);
  r.reconnects = reconnects;
  for (const auto& e : events) {
    if (!counts(e, mode)) continue;
    if (auto w = nearest_window(windows, e.frame.ts_ms, tolerance_ms)) ++r.events_per_window[*w];
    else ++r.off_window_events;
  }
  return r;
}

struct CurvePoint {
  std::size_t game = 0;
  double mean_attempts = 0.0;
  /// Sample stdev; absent when only one session reached the game.
  std::optional<double> stdev_attempts;
  std::size_t n = 0;

  bool operator==(const CurvePoint&) const = default;
};

struct LearningCurve {
  std::vector<CurvePoint> points;

  bool operator==(const LearningCurve&) const = default;
};

struct Moments {
  double mean = 0.0;
  std::optional<double> sample_stdev;
};

inline Moments moments(std::span<const double> xs) {
  if (xs.empty()) throw DomainError("no values");
  Moments m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sample_stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

inline LearningCurve learning_curve(std::span<const std::vector<sim::GameOutcome>> cohort) {
  if (cohort.empty()) throw DomainError("empty cohort");
  std::size_t games = 0;
  for (const auto& log : cohort) games = std::max(games, log.size());
  LearningCurve curve;
  for (std::size_t g = 0; g < games; ++g) {
    std::vector<double> xs;
    for (const auto& log : cohort)
      if (g < log.size()) xs.push_back(static_cast<double>(log[g].attempts));
    const auto m = moments(xs);
    curve.points.push_back({g + 1, m.mean, m.sample_stdev, xs.size()});
  }
  return curve;
}

inline LearningCurve learning_curve(std::span<const sim::SessionLog> cohort) {
  std::vector<std::vector<sim::GameOutcome>> outcomes;
  for (const auto& log : cohort) outcomes.push_back(log.outcomes);
  return learning_curve(std::span<const std::vector<sim::GameOutcome>>(outcomes));
}

struct PrecisionStats {
  std::string phase;
  double mean_pct = 0.0;
  std::optional<double> stdev_pct;
  std::size_t n = 0;

  bool operator==(const PrecisionStats&) const = default;
};

/// `phase` is a play mode, or nullopt for every completed game.
inline PrecisionStats precision_stats(std::span<const std::vector<sim::GameOutcome>> cohort,
                                      std::optional<rhythm::Mode> phase) {
  std::vector<double> xs;
  for (const auto& log : cohort)
    for (const auto& o : log)
      if (!phase || o.mode == *phase) xs.push_back(o.precision_pct);
  if (xs.empty()) throw DomainError("no completed games for phase");
  const auto m = moments(xs);
  return {phase ? std::string(rhythm::to_string(*phase)) : "all", m.mean, m.sample_stdev, xs.size()};
}

// ---- export ---------------------------------------------------------------

enum class Format { Csv, Table };

inline Format parse_format(std::string_view s) {
  if (s == "csv") return Format::Csv;
  if (s == "table") return Format::Table;
  throw UsageError("unknown format '" + std::string(s) + "' (csv|table)");
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

inline std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fixed4(const std::optional<double>& v) { return v ? fixed4(*v) : std::string(); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_field(cells[i]);
    }
    out += "\r\n";
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return out;
}

/// Parses RFC 4180 CSV. Accepts CRLF or LF line ends.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", rows.size() + 1);
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string to_text_table(const Table& t) {
  std::vector<std::size_t> width(t.columns.size(), 0);
  auto widen = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  widen(t.columns);
  for (const auto& r : t.rows) widen(r);
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) l += "  ";
      const std::string cell = cells[i].empty() ? "-" : cells[i];
      // Numbers right-aligned, labels left-aligned.
      const bool numeric = !cell.empty() && (std::isdigit(static_cast<unsigned char>(cell[0])) || cell[0] == '-');
      const std::string pad(width[i] > cell.size() ? width[i] - cell.size() : 0, ' ');
      l += numeric ? pad + cell : cell + pad;
    }
    while (!l.empty() && l.back() == ' ') l.pop_back();
    out += l + '\n';
  };
  line(t.columns);
  std::vector<std::string> rule;
  for (auto w : width) rule.push_back(std::string(w, '-'));
  line(rule);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline std::string render(const Table& t, Format f) { return f == Format::Csv ? to_csv(t) : to_text_table(t); }

inline Table table_of(const GraspWindowReport& r) {
  Table t{{"row", "window_start_ms", "events"}, {}};
  const bool empty = r.window_starts.empty() && r.off_window_events == 0 && r.reconnects == 0;
  if (empty) return t;
  for (std::size_t i = 0; i < r.window_starts.size(); ++i)
    t.rows.push_back({"window " + std::to_string(i + 1), std::to_string(r.window_starts[i]),
                      std::to_string(r.events_per_window[i])});
  t.rows.push_back({"off_window", "", std::to_string(r.off_window_events)});
  t.rows.push_back({"reconnects", "", std::to_string(r.reconnects)});
  return t;
}

inline Table table_of(const LearningCurve& c) {
  Table t{{"game", "mean_attempts", "stdev_attempts", "n"}, {}};
  for (const auto& p : c.points)
    t.rows.push_back({std::to_string(p.game), fixed4(p.mean_attempts), fixed4(p.stdev_attempts), std::to_string(p.n)});
  return t;
}

inline Table table_of(std::span<const PrecisionStats> stats) {
  Table t{{"phase", "mean_pct", "stdev_pct", "n"}, {}};
  for (const auto& s : stats) t.rows.push_back({s.phase, fixed4(s.mean_pct), fixed4(s.stdev_pct), std::to_string(s.n)});
  return t;
}

template <class Report>
std::string export_report(const Report& report, Format f) {
  return render(table_of(report), f);
}

inline std::string export_report(const GraspWindowReport& r, std::string_view format) {
  return render(table_of(r), parse_format(format));
}

inline std::string export_report(const LearningCurve& c, std::string_view format) {
  return render(table_of(c), parse_format(format));
}

} // namespace pocket::analysis
