// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hetplan/core_model.hpp"

namespace hetplan {

// Per-microbatch compute latency of one transformer layer.
//
// Profiled microbatch sizes are answered from the table verbatim; larger
// sizes fall on the affine fit of the upper (saturated) part of the profile.
class LatencyModel {
 public:
  LatencyModel() = default;
  LatencyModel(std::vector<Millis> table, double slope, Millis intercept);

  Millis eval(std::int64_t m) const;
  std::int64_t max_profiled() const { return static_cast<std::int64_t>(table_.size()); }
  const std::vector<Millis>& table() const { return table_; }
  double slope() const { return slope_; }
  Millis intercept() const { return intercept_; }

  // |table[m_max] - fit(m_max)| / table[m_max]
  double continuity_gap() const;

  bool operator==(const LatencyModel&) const = default;

 private:
  std::vector<Millis> table_;  // table_[m - 1]
  double slope_ = 0;
  Millis intercept_ = 0;
};

// Affine compute-memory model M(m) = intercept + slope * m. Independent of
// the number of microbatches, so no l parameter exists.
struct MemoryModel {
  double slope = 0;       // bytes per sample
  Bytes intercept = 0;    // framework-state floor
  double max_rel_residual = 0;

  Bytes eval(std::int64_t m) const { return intercept + slope * static_cast<double>(m); }
  bool operator==(const MemoryModel&) const = default;
};

struct GpuPerfModel {
  LatencyModel fwd;
  LatencyModel bwd;
  MemoryModel memory;

  bool operator==(const GpuPerfModel&) const = default;
};

// Fitted models keyed by profile_key.
struct PerfModelSet {
  std::map<std::string, GpuPerfModel> models;

  const GpuPerfModel& at(const std::string& key) const;
  bool operator==(const PerfModelSet&) const = default;
};

struct LatencyFit {
  LatencyModel fwd;
  LatencyModel bwd;
};

// Default boundary of the linear regime: ceil(m_max / 2).
std::int64_t default_linear_regime_start(std::int64_t max_profiled);

// Table regime is exact; points with m >= linear_regime_start feed the
// least-squares extrapolation.
LatencyFit fit_latency(const ComputeProfile& profile,
                       std::optional<std::int64_t> linear_regime_start = std::nullopt);

MemoryModel fit_memory(const MemoryProfile& profile);

GpuPerfModel fit_profile(const ProfileDocument& profile,
                         std::optional<std::int64_t> linear_regime_start = std::nullopt);

// l * eval(m)
Millis total_latency(const LatencyModel& model, std::int64_t m, std::int64_t l);

struct CollectiveLatency {
  Millis allgather = 0;
  Millis reducescatter = 0;
};

CollectiveLatency collective_latency(const CommProfile& comm, bool uneven);

// Slope used for the aggregate memory bound: the largest slope among the
// cluster's memory models. Throws ValidationError if slopes spread more
// than `max_relative_spread` (relative to the smallest) or a key is missing.
double shared_memory_slope(const ClusterSpec& cluster, const PerfModelSet& perf,
                           double max_relative_spread = 0.05);

// Ordinary least squares y = intercept + slope * x.
struct AffineFit {
  double slope = 0;
  double intercept = 0;
};
AffineFit least_squares(const std::vector<std::pair<double, double>>& points);

}  // namespace hetplan
