// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pocketsim/touch/plate.hpp"

namespace pocket::touch {

struct Calibration {
  std::array<double, kPlateCount> thresholds{};
  /// Baseline had zero spread; threshold fell back to a fraction of the mean.
  std::array<bool, kPlateCount> degenerate{};
  /// Samples discarded as touches by the median filter.
  std::array<std::size_t, kPlateCount> rejected{};
};

struct CalibrationOptions {
  double k = 3.0;
  std::size_t min_samples = 50;
  double degenerate_fraction = 0.75;
  /// Samples further than this many scaled MADs from the median are dropped.
  double outlier_mads = 3.0;
  double clamp_lo = 5.0;
  double clamp_hi = 95.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = (m + lo) / 2.0;
  }
  return m;
}

} // namespace detail

/// Per-plate threshold = mean - k * stddev of the untouched baseline,
/// clamped to [5, 95]. Touches that leaked into the baseline are removed
/// first by a median/MAD filter.
inline Calibration calibrate(std::span<const CapacitanceSample> baseline,
                             const CalibrationOptions& opt = {}) {
  std::array<std::vector<double>, kPlateCount> per_plate;
  for (const auto& s : baseline) {
    if (s.plate >= kPlateCount) throw RoutingError("baseline sample for unknown plate");
    per_plate[s.plate].push_back(s.value);
  }

  Calibration cal;
  for (std::size_t p = 0; p < kPlateCount; ++p) {
    const auto& raw = per_plate[p];
    if (raw.size() < opt.min_samples)
      throw CalibrationError("plate " + std::to_string(p) + " has " + std::to_string(raw.size()) +
                             " baseline samples, need " + std::to_string(opt.min_samples));

    const double med = detail::median(raw);
    std::vector<double> dev;
    dev.reserve(raw.size());
    for (double v : raw) dev.push_back(std::abs(v - med));
    const double mad = 1.4826 * detail::median(dev);

    std::vector<double> kept;
    kept.reserve(raw.size());
    for (double v : raw) {
      const bool outlier = mad > 0.0 ? std::abs(v - med) > opt.outlier_mads * mad : v != med;
      if (!outlier) kept.push_back(v);
    }
    cal.rejected[p] = raw.size() - kept.size();

    double mean = 0.0;
    for (double v : kept) mean += v;
    mean /= static_cast<double>(kept.size());
    double var = 0.0;
    for (double v : kept) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(kept.size()));

    double threshold;
    if (sd == 0.0) {
      cal.degenerate[p] = true;
      threshold = opt.degenerate_fraction * mean;
    } else {
      threshold = mean - opt.k * sd;
    }
    cal.thresholds[p] = std::clamp(threshold, opt.clamp_lo, opt.clamp_hi);
  }
  return cal;
}

} // namespace pocket::touch
