// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetplan/core_model.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan {

enum class Constraint {
  kStructure,        // plan/cluster mismatch, b != m*l, bad ratios
  kBatchSum,         // I
  kComputeMemory,    // II
  kAggregateMemory,  // III
  kStateRatioSum,    // sum r_i = 1
  kGpuCapacity,      // compute + state on one GPU
};

const char* constraint_name(Constraint c);

struct Violation {
  Constraint constraint;
  std::string gpu_id;  // empty for cluster-wide constraints
  std::string message;

  bool operator==(const Violation&) const = default;
};

// Aggregate compute memory for total microbatch mass k, as used by the
// aggregate constraint: sum of per-GPU intercepts (clamped at zero) plus the
// shared slope times k. Every GPU contributes its floor whether or not it
// computes, which upper-bounds the per-GPU sum for any assignment with mass k.
Bytes aggregate_compute_memory(const ClusterSpec& cluster, const PerfModelSet& perf,
                               double shared_slope, std::int64_t k);

// Per-GPU compute memory of an assignment; zero for idle GPUs.
Bytes assignment_compute_memory(const GpuPerfModel& model, const GpuAssignment& a);

inline constexpr double kRatioSumTolerance = 1e-9;

// Empty result iff constraints I, II, III, sum r_i = 1 and per-GPU capacity hold.
std::vector<Violation> validate_plan(const TrainPlan& plan, const ClusterSpec& cluster,
                                     const ModelSpec& model, const PerfModelSet& perf);

}  // namespace hetplan
