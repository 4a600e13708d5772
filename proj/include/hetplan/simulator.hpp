// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hetplan/core_model.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan {

struct SimConfig {
  TrainPlan plan;
  ClusterSpec cluster;
  ModelSpec model;
  PerfModelSet perf;
  // CPU<->GPU link, bytes per millisecond. Infinity makes transfers free.
  double offload_bandwidth = std::numeric_limits<double>::infinity();
  Bytes activation_bytes_per_sample = 0;
  bool offload_enabled = false;
  // Extra recompute per backward microbatch, as a multiple of its forward
  // time. Zero means the profiled backward already includes recomputation.
  double recompute_multiplier = 0.0;
};

enum class EventKind {
  kFwdCompute,     // F
  kBwdCompute,     // B
  kRecompute,      // RA
  kAllGather,      // AG
  kReduceScatter,  // RS
  kOffloadAct,     // GC^a
  kPrefetchAct,    // CG^a
  kOffloadGrad,    // GC^g
  kPrefetchGrad,   // CG^g
};

enum class Phase { kForward, kBackward };

enum class Stream { kCompute, kNetwork, kTransfer };

const char* event_kind_name(EventKind kind);
Stream event_stream(EventKind kind);

struct Event {
  std::string gpu_id;
  std::size_t gpu = 0;
  EventKind kind = EventKind::kFwdCompute;
  Phase phase = Phase::kForward;
  std::int64_t unit = 0;        // 1-based FSDP unit
  std::int64_t microbatch = 0;  // 1-based; 0 for collectives
  Millis start = 0;
  Millis end = 0;

  bool operator==(const Event&) const = default;
};

struct SimResult {
  Millis iteration_ms = 0;
  // Steady-state interval between consecutive unit completions.
  Millis per_layer_fwd_ms = 0;
  Millis per_layer_bwd_ms = 0;
  std::vector<Bytes> peak_gpu_memory;
  std::vector<Bytes> peak_cpu_buffer;
  // Largest footprint of any single layer boundary's activations.
  std::vector<Bytes> peak_activation_residency;
  std::vector<Bytes> peak_gradient_residency;
  std::vector<Millis> exposed_comm_per_gpu;
  std::vector<Millis> exposed_transfer_per_gpu;
  std::vector<Millis> compute_busy_ms;
  Millis exposed_comm_ms = 0;      // max over GPUs
  Millis exposed_transfer_ms = 0;  // max over GPUs
  std::vector<Event> trace;
};

// Throws ValidationError if the plan fails validate_plan or the config is
// inconsistent.
SimResult simulate_iteration(const SimConfig& cfg);

std::vector<Bytes> peak_activation_memory(const SimConfig& cfg);

// Per-layer forward/backward cost model evaluated on the plan, including any
// recompute term.
struct AnalyticLayer {
  Millis fwd = 0;
  Millis bwd = 0;
  Millis iteration = 0;
};
AnalyticLayer analytic_prediction(const SimConfig& cfg);

struct CrosscheckReport {
  Millis predicted_iteration = 0;
  Millis simulated_iteration = 0;
  double relative_error = 0;
  // (first AllGather + last ReduceScatter) / simulated: the pipeline fill
  // and drain the analytic model leaves out.
  double edge_bound = 0;
};
CrosscheckReport crosscheck_optimizer(const TrainPlan& plan, const SimConfig& cfg);

// Bandwidth at which every transfer issued alongside a compute op fits
// within that op's duration.
double required_offload_bandwidth(const SimConfig& cfg);

// Structural check of a trace: stream serialization, collective barriers,
// and ordering against the schedule's dependencies. Returns problems found.
std::vector<std::string> lint_trace(const SimResult& result, const SimConfig& cfg);

}  // namespace hetplan
