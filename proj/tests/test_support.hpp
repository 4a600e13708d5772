// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hetplan/json_io.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan::testing {

inline std::string fixture(const std::string& name) { return std::string(HETPLAN_FIXTURE_DIR) + "/" + name; }

inline PerfModelSet fit_all(const std::string& profile_file) {
  PerfModelSet perf;
  for (const auto& doc : load_profiles(fixture(profile_file))) perf.models.emplace(doc.key(), fit_profile(doc));
  return perf;
}

// Independent least squares via raw sums, for cross-checking the library fit.
inline std::pair<double, double> raw_sums_fit(const std::vector<std::pair<double, double>>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {slope, (sy - slope * sx) / n};
}

inline GpuPerfModel affine_model(double f_int, double f_slope, double b_int, double b_slope, double mem_int,
                                 double mem_slope) {
  GpuPerfModel m;
  m.fwd = LatencyModel({}, f_slope, f_int);
  m.bwd = LatencyModel({}, b_slope, b_int);
  m.memory.intercept = mem_int;
  m.memory.slope = mem_slope;
  return m;
}

}  // namespace hetplan::testing
