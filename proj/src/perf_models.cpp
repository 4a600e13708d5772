// SPDX-License-Identifier: Apache-2.0
#include "hetplan/perf_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hetplan/errors.hpp"

namespace hetplan {

LatencyModel::LatencyModel(std::vector<Millis> table, double slope, Millis intercept)
    : table_(std::move(table)), slope_(slope), intercept_(intercept) {}

Millis LatencyModel::eval(std::int64_t m) const {
  if (m >= 1 && m <= max_profiled()) return table_[static_cast<std::size_t>(m - 1)];
  return intercept_ + slope_ * static_cast<double>(m);
}

double LatencyModel::continuity_gap() const {
  if (table_.empty()) return 0;
  const Millis last = table_.back();
  const Millis fitted = intercept_ + slope_ * static_cast<double>(max_profiled());
  return std::abs(last - fitted) / last;
}

const GpuPerfModel& PerfModelSet::at(const std::string& key) const {
  auto it = models.find(key);
  if (it == models.end()) throw ValidationError("no fitted model for profile_key '" + key + "'");
  return it->second;
}

AffineFit least_squares(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw InsufficientPointsError("least squares needs at least 2 points");
  const double n = static_cast<double>(points.size());
  double mean_x = 0, mean_y = 0;
  for (const auto& [x, y] : points) {
    mean_x += x;
    mean_y += y;
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : points) {
    sxx += (x - mean_x) * (x - mean_x);
    sxy += (x - mean_x) * (y - mean_y);
  }
  if (sxx == 0) throw InsufficientPointsError("least squares needs two distinct x values");
  AffineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  return fit;
}

std::int64_t default_linear_regime_start(std::int64_t max_profiled) {
  return (max_profiled + 1) / 2;
}

namespace {

LatencyModel fit_one(const std::vector<ProfilePoint<Millis>>& points, std::int64_t start,
                     const std::string& what) {
  std::vector<Millis> table;
  std::vector<std::pair<double, double>> tail;
  for (const auto& p : points) {
    table.push_back(p.value);
    if (p.microbatch >= start) tail.emplace_back(static_cast<double>(p.microbatch), p.value);
  }
  if (tail.size() < 2) {
    throw InsufficientPointsError(what + ": need at least 2 profile points at or beyond m = " +
                                  std::to_string(start) + ", have " +
                                  std::to_string(tail.size()));
  }
  const AffineFit fit = least_squares(tail);
  if (!(fit.slope > 0)) throw ValidationError(what + ": fitted latency slope is not positive");
  return LatencyModel(std::move(table), fit.slope, fit.intercept);
}

}  // namespace

LatencyFit fit_latency(const ComputeProfile& profile,
                       std::optional<std::int64_t> linear_regime_start) {
  auto start_for = [&](const std::vector<ProfilePoint<Millis>>& pts) {
    const std::int64_t m_max = pts.empty() ? 0 : pts.back().microbatch;
    return linear_regime_start.value_or(default_linear_regime_start(m_max));
  };
  LatencyFit out;
  out.fwd = fit_one(profile.fwd, start_for(profile.fwd), profile.profile_key + " fwd");
  out.bwd = fit_one(profile.bwd, start_for(profile.bwd), profile.profile_key + " bwd");
  return out;
}

MemoryModel fit_memory(const MemoryProfile& profile) {
  if (profile.points.size() < 2) {
    throw InsufficientPointsError(profile.profile_key +
                                  ": memory fit needs at least 2 profile points");
  }
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : profile.points) pts.emplace_back(static_cast<double>(p.microbatch), p.value);
  const AffineFit fit = least_squares(pts);
  if (!(fit.slope > 0)) throw ValidationError(profile.profile_key + ": memory slope is not positive");
  MemoryModel model{fit.slope, fit.intercept, 0};
  for (const auto& p : profile.points) {
    const double rel = std::abs(model.eval(p.microbatch) - p.value) / p.value;
    model.max_rel_residual = std::max(model.max_rel_residual, rel);
  }
  return model;
}

GpuPerfModel fit_profile(const ProfileDocument& profile,
                         std::optional<std::int64_t> linear_regime_start) {
  auto latency = fit_latency(profile.compute, linear_regime_start);
  return GpuPerfModel{std::move(latency.fwd), std::move(latency.bwd), fit_memory(profile.memory)};
}

Millis total_latency(const LatencyModel& model, std::int64_t m, std::int64_t l) {
  return static_cast<double>(l) * model.eval(m);
}

CollectiveLatency collective_latency(const CommProfile& comm, bool uneven) {
  if (!uneven) return {comm.allgather_even, comm.reducescatter_even};
  const double scale = 1.0 + comm.uneven_overhead;
  return {comm.allgather_even * scale, comm.reducescatter_even * scale};
}

double shared_memory_slope(const ClusterSpec& cluster, const PerfModelSet& perf,
                           double max_relative_spread) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0;
  for (const auto& gpu : cluster.gpus) {
    const double s = perf.at(gpu.profile_key).memory.slope;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if ((hi - lo) > max_relative_spread * lo) {
    throw ValidationError("memory-model slopes differ by more than " +
                          std::to_string(max_relative_spread * 100) +
                          "% across the cluster; the aggregate memory bound needs a shared slope");
  }
  return hi;
}

}  // namespace hetplan
