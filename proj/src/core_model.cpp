// SPDX-License-Identifier: Apache-2.0
#include "hetplan/core_model.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "hetplan/errors.hpp"

namespace hetplan {

Bytes ClusterSpec::total_effective_capacity() const {
  Bytes total = 0;
  for (std::size_t i = 0; i < gpus.size(); ++i) total += effective_capacity(i);
  return total;
}

std::int64_t TrainPlan::total_batch() const {
  std::int64_t sum = 0;
  for (const auto& a : assignments) sum += a.batch;
  return sum;
}

std::int64_t TrainPlan::total_microbatch_mass() const {
  std::int64_t sum = 0;
  for (const auto& a : assignments) sum += a.microbatch;
  return sum;
}

void validate_cluster(const ClusterSpec& cluster) {
  if (cluster.gpus.empty()) throw ValidationError("cluster has no GPUs");
  std::set<std::string> ids;
  for (const auto& gpu : cluster.gpus) {
    if (gpu.id.empty()) throw ValidationError("GPU with empty id");
    if (!ids.insert(gpu.id).second) throw ValidationError("duplicate GPU id '" + gpu.id + "'");
    if (!(gpu.memory_capacity > 0) || !std::isfinite(gpu.memory_capacity)) {
      throw ValidationError("GPU '" + gpu.id + "' has nonpositive memory capacity");
    }
    if (gpu.profile_key.empty()) throw ValidationError("GPU '" + gpu.id + "' has no profile_key");
  }
  if (!(cluster.mem_cap_fraction > 0) || cluster.mem_cap_fraction > 1) {
    throw ValidationError("mem_cap_fraction must lie in (0, 1]");
  }
  const auto& c = cluster.comm;
  if (!(c.allgather_even > 0) || !(c.reducescatter_even > 0)) {
    throw ValidationError("collective latencies must be positive");
  }
  if (!(c.uneven_overhead >= 0)) throw ValidationError("uneven_overhead must be >= 0");
}

void validate_model(const ModelSpec& model) {
  if (model.layers < 1) throw ValidationError("layers must be >= 1");
  if (model.params_per_layer < 1) throw ValidationError("params_per_layer must be >= 1");
  if (model.global_batch < 1) throw ValidationError("global_batch must be >= 1");
  if (!(model.bytes_per_param_state > 0)) throw ValidationError("bytes_per_param_state must be > 0");
}

namespace {

template <typename T>
void check_points(const std::vector<ProfilePoint<T>>& points, const std::string& what,
                  bool strictly_increasing_values) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].microbatch != static_cast<std::int64_t>(i) + 1) {
      throw ValidationError(what + ": microbatch sizes must run 1, 2, 3, ... without gaps");
    }
    if (!(points[i].value > 0) || !std::isfinite(static_cast<double>(points[i].value))) {
      throw ValidationError(what + ": values must be positive");
    }
    if (strictly_increasing_values && i > 0 && !(points[i].value > points[i - 1].value)) {
      throw ValidationError(what + ": values must increase strictly with microbatch size");
    }
  }
}

}  // namespace

void validate_profile(const ProfileDocument& profile) {
  if (profile.compute.profile_key.empty()) throw ValidationError("profile without profile_key");
  if (profile.memory.profile_key != profile.compute.profile_key) {
    throw ValidationError("profile_key mismatch between compute and memory samples");
  }
  const std::string& key = profile.compute.profile_key;
  check_points(profile.compute.fwd, key + " fwd_ms", false);
  check_points(profile.compute.bwd, key + " bwd_ms", false);
  check_points(profile.memory.points, key + " compute_mem_gib", true);
}

}  // namespace hetplan
