// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "hetplan/core_model.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan {

inline constexpr Millis kInfinity = std::numeric_limits<double>::infinity();

// Per-layer forward/backward time of one GPU, each bounded below by the
// collectives that overlap it.
struct LayerLatency {
  Millis t_fwd = 0;
  Millis t_bwd = 0;
  bool used_uneven_comm = false;

  Millis total() const { return t_fwd + t_bwd; }
};

// Throws InfeasibleError (constraint II) if M(m) exceeds effective_capacity.
// Uneven collective latencies are used when M(m) + even_state_share does not fit.
LayerLatency per_gpu_layer_latency(const GpuPerfModel& model, Bytes effective_capacity,
                                   const CommProfile& comm, std::int64_t m, std::int64_t l,
                                   Bytes even_state_share);

// A GPU without compute still waits on every collective.
LayerLatency idle_layer_latency(Bytes effective_capacity, const CommProfile& comm,
                                Bytes even_state_share);

struct ComputeChoice {
  std::int64_t microbatch = 0;
  std::int64_t num_microbatches = 0;

  bool idle() const { return microbatch == 0; }
  std::int64_t batch() const { return microbatch * num_microbatches; }
  bool operator==(const ComputeChoice&) const = default;
};

// Cluster, model and fitted models flattened into what the solvers need.
class PlanningProblem {
 public:
  PlanningProblem(const ClusterSpec& cluster, const ModelSpec& model, const PerfModelSet& perf);

  std::size_t gpus() const { return caps_.size(); }
  std::int64_t batch() const { return model_->global_batch; }
  Bytes state_bytes() const { return state_bytes_; }
  Bytes even_state_share() const { return even_share_; }
  Bytes capacity(std::size_t i) const { return caps_[i]; }
  const GpuPerfModel& model(std::size_t i) const { return *models_[i]; }
  const ClusterSpec& cluster() const { return *cluster_; }
  const ModelSpec& model_spec() const { return *model_; }
  const PerfModelSet& perf() const { return *perf_; }
  double shared_slope() const { return shared_slope_; }

  bool compute_fits(std::size_t i, std::int64_t m) const;
  LayerLatency layer_latency(std::size_t i, const ComputeChoice& c) const;
  // Constraint III for total microbatch mass k.
  bool aggregate_fits(std::int64_t k) const;
  Bytes aggregate_memory(std::int64_t k) const;

 private:
  const ClusterSpec* cluster_;
  const ModelSpec* model_;
  const PerfModelSet* perf_;
  std::vector<Bytes> caps_;
  std::vector<const GpuPerfModel*> models_;
  Bytes state_bytes_ = 0;
  Bytes even_share_ = 0;
  double shared_slope_ = 0;
};

struct OptimizerOptions {
  bool allow_idle = false;
  bool prune = true;
  unsigned threads = 1;                 // 0 = hardware concurrency
  std::int64_t partition_quanta = 1024;
};

struct OptimizerReport {
  std::int64_t cells = 0;
  std::int64_t transitions_evaluated = 0;
  std::int64_t pairs_skipped_memory = 0;
  std::int64_t pairs_pruned_dominance = 0;
  Millis upper_bound = kInfinity;
  Millis objective = kInfinity;  // min over plans of max_i per-GPU layer time
  std::int64_t chosen_k = 0;
  double wall_seconds = 0;
  unsigned threads = 1;
  // The uneven-collective flag the solver assumed vs. what the final state
  // partition turned out to need.
  bool assumed_uneven = false;
  bool partition_uneven = false;
};

struct OptimizeResult {
  TrainPlan plan;
  OptimizerReport report;
};

// D[i][j][k]: best max-latency for the first i GPUs with batch mass j and
// microbatch mass k, plus the (m, l) that produced each cell.
class DpTable {
 public:
  DpTable(std::size_t gpus, std::int64_t batch);

  std::size_t gpus() const { return gpus_; }
  std::int64_t batch() const { return batch_; }

  Millis& at(std::size_t i, std::int64_t j, std::int64_t k) { return cost_[index(i, j, k)]; }
  Millis at(std::size_t i, std::int64_t j, std::int64_t k) const { return cost_[index(i, j, k)]; }
  std::optional<ComputeChoice> choice(std::size_t i, std::int64_t j, std::int64_t k) const;
  void set_choice(std::size_t i, std::int64_t j, std::int64_t k, const ComputeChoice& c);

  Millis* row(std::size_t i, std::int64_t j) { return &cost_[index(i, j, 0)]; }
  const Millis* row(std::size_t i, std::int64_t j) const { return &cost_[index(i, j, 0)]; }
  std::uint32_t* choice_row(std::size_t i, std::int64_t j) { return &choice_[index(i, j, 0)]; }

  static constexpr std::uint32_t kNoChoice = 0xFFFFFFFFu;
  static std::uint32_t pack(std::int64_t m, std::int64_t l) {
    return static_cast<std::uint32_t>((m << 16) | l);
  }

 private:
  std::size_t index(std::size_t i, std::int64_t j, std::int64_t k) const {
    return (i * static_cast<std::size_t>(batch_ + 1) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(batch_ + 1) +
           static_cast<std::size_t>(k);
  }

  std::size_t gpus_;
  std::int64_t batch_;
  std::vector<Millis> cost_;
  std::vector<std::uint32_t> choice_;
};

// Fills the full table. `upper_bound` enables dominance pruning: an (m, l)
// whose own latency exceeds it cannot appear in any plan at or below it.
DpTable build_dp_table(const PlanningProblem& problem, const OptimizerOptions& options,
                       Millis upper_bound, OptimizerReport& report);

// Throughput-maximizing plan with training-state ratios filled in.
// Throws InfeasibleError when no plan meets constraints I-III.
OptimizeResult dp_optimize(const ClusterSpec& cluster, const ModelSpec& model,
                           const PerfModelSet& perf, const OptimizerOptions& options = {});

inline constexpr std::size_t kBruteForceMaxGpus = 5;
inline constexpr std::int64_t kBruteForceMaxBatch = 16;

// Exhaustive search over every per-GPU (m, l). Testing oracle.
OptimizeResult brute_force_optimize(const ClusterSpec& cluster, const ModelSpec& model,
                                    const PerfModelSet& perf, const OptimizerOptions& options = {});

// Fills predicted latencies/memory for fixed compute choices. State ratios
// are left at zero.
TrainPlan plan_from_choices(const PlanningProblem& problem,
                            const std::vector<ComputeChoice>& choices);

// max_i per-GPU (t_fwd + t_bwd): the quantity the solvers minimize.
Millis plan_objective(const PlanningProblem& problem, const std::vector<ComputeChoice>& choices);

// Greedy training-state placement: quanta of M_state/quanta go to the GPU
// with the lowest utilization (compute + state) / effective capacity.
TrainPlan partition_state(TrainPlan plan, const ClusterSpec& cluster, const ModelSpec& model,
                          const PerfModelSet& perf, std::int64_t quanta = 1024);

// Transition count of the unpruned recurrence, by direct loop enumeration.
std::uint64_t complexity_budget(std::int64_t gpus, std::int64_t batch);

}  // namespace hetplan
