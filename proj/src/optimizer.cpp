// SPDX-License-Identifier: Apache-2.0
#include "hetplan/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>

#include "hetplan/errors.hpp"
#include "hetplan/plan_validation.hpp"

namespace hetplan {

LayerLatency per_gpu_layer_latency(const GpuPerfModel& model, Bytes effective_capacity,
                                   const CommProfile& comm, std::int64_t m, std::int64_t l,
                                   Bytes even_state_share) {
  const Bytes mem = model.memory.eval(m);
  if (mem > effective_capacity) {
    throw InfeasibleError("II", "compute memory for microbatch " + std::to_string(m) +
                                    " exceeds the GPU's effective capacity (constraint II)");
  }
  const bool uneven = mem + even_state_share > effective_capacity;
  const CollectiveLatency c = collective_latency(comm, uneven);
  LayerLatency out;
  out.t_fwd = std::max(total_latency(model.fwd, m, l), c.allgather);
  out.t_bwd = std::max(total_latency(model.bwd, m, l), c.allgather + c.reducescatter);
  out.used_uneven_comm = uneven;
  return out;
}

LayerLatency idle_layer_latency(Bytes effective_capacity, const CommProfile& comm,
                                Bytes even_state_share) {
  const bool uneven = even_state_share > effective_capacity;
  const CollectiveLatency c = collective_latency(comm, uneven);
  return {c.allgather, c.allgather + c.reducescatter, uneven};
}

PlanningProblem::PlanningProblem(const ClusterSpec& cluster, const ModelSpec& model,
                                 const PerfModelSet& perf)
    : cluster_(&cluster), model_(&model), perf_(&perf) {
  validate_cluster(cluster);
  validate_model(model);
  for (std::size_t i = 0; i < cluster.gpus.size(); ++i) {
    caps_.push_back(cluster.effective_capacity(i));
    models_.push_back(&perf.at(cluster.gpus[i].profile_key));
  }
  state_bytes_ = model.state_bytes();
  even_share_ = state_bytes_ / static_cast<double>(cluster.gpus.size());
  shared_slope_ = shared_memory_slope(cluster, perf);
}

bool PlanningProblem::compute_fits(std::size_t i, std::int64_t m) const {
  return models_[i]->memory.eval(m) <= caps_[i];
}

LayerLatency PlanningProblem::layer_latency(std::size_t i, const ComputeChoice& c) const {
  if (c.idle()) return idle_layer_latency(caps_[i], cluster_->comm, even_share_);
  return per_gpu_layer_latency(*models_[i], caps_[i], cluster_->comm, c.microbatch,
                               c.num_microbatches, even_share_);
}

Bytes PlanningProblem::aggregate_memory(std::int64_t k) const {
  return aggregate_compute_memory(*cluster_, *perf_, shared_slope_, k);
}

bool PlanningProblem::aggregate_fits(std::int64_t k) const {
  return state_bytes_ + aggregate_memory(k) <= cluster_->total_effective_capacity();
}

DpTable::DpTable(std::size_t gpus, std::int64_t batch)
    : gpus_(gpus),
      batch_(batch),
      cost_((gpus + 1) * static_cast<std::size_t>(batch + 1) * static_cast<std::size_t>(batch + 1), kInfinity),
      choice_(cost_.size(), kNoChoice) {}

std::optional<ComputeChoice> DpTable::choice(std::size_t i, std::int64_t j, std::int64_t k) const {
  const std::uint32_t c = choice_[index(i, j, k)];
  if (c == kNoChoice) return std::nullopt;
  return ComputeChoice{static_cast<std::int64_t>(c >> 16), static_cast<std::int64_t>(c & 0xFFFFu)};
}

void DpTable::set_choice(std::size_t i, std::int64_t j, std::int64_t k, const ComputeChoice& c) {
  choice_[index(i, j, k)] = pack(c.microbatch, c.num_microbatches);
}

Millis plan_objective(const PlanningProblem& problem, const std::vector<ComputeChoice>& choices) {
  Millis worst = 0;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    worst = std::max(worst, problem.layer_latency(i, choices[i]).total());
  }
  return worst;
}

namespace {

struct Transition {
  std::int64_t m;
  std::int64_t l;
  Millis cost;
};

unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Sweep rows of layer i whose index is congruent to `lane` mod `lanes`.
std::int64_t sweep_rows(DpTable& table, std::size_t i, const std::vector<Transition>& moves,
                        const std::optional<Millis>& idle_cost, unsigned lane, unsigned lanes) {
  const std::int64_t batch = table.batch();
  std::int64_t evaluated = 0;
  for (std::int64_t j = lane; j <= batch; j += lanes) {
    Millis* cur = table.row(i, j);
    std::uint32_t* ch = table.choice_row(i, j);
    if (idle_cost) {
      const Millis* src = table.row(i - 1, j);
      const Millis t = *idle_cost;
      const std::uint32_t code = DpTable::pack(0, 0);
      for (std::int64_t k = 0; k <= j; ++k) {
        const Millis cand = std::max(src[k], t);
        const bool better = cand < cur[k];
        cur[k] = better ? cand : cur[k];
        ch[k] = better ? code : ch[k];
      }
      evaluated += j + 1;
    }
    for (const Transition& mv : moves) {
      const std::int64_t b = mv.m * mv.l;
      if (b > j) continue;
      const Millis* src = table.row(i - 1, j - b);
      const std::int64_t k_hi = j - b + mv.m;  // source mass never exceeds source batch
      const Millis t = mv.cost;
      const std::uint32_t code = DpTable::pack(mv.m, mv.l);
      const std::int64_t m = mv.m;
      for (std::int64_t k = m; k <= k_hi; ++k) {
        const Millis cand = std::max(src[k - m], t);
        const bool better = cand < cur[k];
        cur[k] = better ? cand : cur[k];
        ch[k] = better ? code : ch[k];
      }
      evaluated += k_hi - m + 1;
    }
  }
  return evaluated;
}

// Feasible plan with every active GPU at microbatch 1, samples dealt to the
// GPU whose compute finishes first. Used only as a pruning bound.
Millis unit_microbatch_bound(const PlanningProblem& p, bool allow_idle) {
  const std::size_t n = p.gpus();
  std::vector<ComputeChoice> choices(n);
  std::vector<double> per_sample(n);
  std::int64_t remaining = p.batch();
  for (std::size_t i = 0; i < n; ++i) {
    if (p.compute_fits(i, 1)) {
      per_sample[i] = p.model(i).fwd.eval(1) + p.model(i).bwd.eval(1);
      if (!allow_idle) {
        choices[i] = {1, 1};
        --remaining;
      }
    } else if (!allow_idle) {
      return kInfinity;
    } else {
      per_sample[i] = kInfinity;
    }
  }
  if (remaining < 0) return kInfinity;
  for (; remaining > 0; --remaining) {
    std::size_t best = n;
    double best_time = kInfinity;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(per_sample[i])) continue;
      const double t = per_sample[i] * static_cast<double>(choices[i].num_microbatches + 1);
      if (t < best_time) {
        best_time = t;
        best = i;
      }
    }
    if (best == n) return kInfinity;
    choices[best] = {1, choices[best].num_microbatches + 1};
  }
  std::int64_t mass = 0;
  for (const auto& c : choices) mass += c.microbatch;
  if (!p.aggregate_fits(mass)) return kInfinity;
  return plan_objective(p, choices);
}

}  // namespace

DpTable build_dp_table(const PlanningProblem& p, const OptimizerOptions& options, Millis upper_bound,
                       OptimizerReport& report) {
  const std::int64_t batch = p.batch();
  if (batch > 0xFFFF) throw ValidationError("global batch above 65535 is not supported by the DP");
  DpTable table(p.gpus(), batch);
  table.at(0, 0, 0) = 0;
  const unsigned lanes = resolve_threads(options.threads);
  report.threads = lanes;

  for (std::size_t i = 1; i <= p.gpus(); ++i) {
    const std::size_t g = i - 1;
    std::vector<Transition> moves;
    for (std::int64_t m = 1; m <= batch; ++m) {
      const std::int64_t l_max = batch / m;
      if (!p.compute_fits(g, m)) {
        report.pairs_skipped_memory += l_max;
        continue;
      }
      for (std::int64_t l = 1; l <= l_max; ++l) {
        const Millis cost = p.layer_latency(g, {m, l}).total();
        if (cost > upper_bound) {
          // latency is nondecreasing in l
          report.pairs_pruned_dominance += l_max - l + 1;
          break;
        }
        moves.push_back({m, l, cost});
      }
    }
    std::optional<Millis> idle_cost;
    if (options.allow_idle) idle_cost = p.layer_latency(g, {0, 0}).total();

    std::vector<std::int64_t> evaluated(lanes, 0);
    if (lanes == 1) {
      evaluated[0] = sweep_rows(table, i, moves, idle_cost, 0, 1);
    } else {
      std::vector<std::thread> workers;
      for (unsigned t = 0; t < lanes; ++t) {
        workers.emplace_back([&, t] { evaluated[t] = sweep_rows(table, i, moves, idle_cost, t, lanes); });
      }
      for (auto& w : workers) w.join();
    }
    for (auto e : evaluated) report.transitions_evaluated += e;
    report.cells += (batch + 1) * (batch + 2) / 2;
  }
  report.upper_bound = upper_bound;
  return table;
}

TrainPlan plan_from_choices(const PlanningProblem& p, const std::vector<ComputeChoice>& choices) {
  TrainPlan plan;
  const auto& gpus = p.cluster().gpus;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const ComputeChoice& c = choices[i];
    GpuAssignment a;
    a.gpu_id = gpus[i].id;
    a.microbatch = c.microbatch;
    a.num_microbatches = c.num_microbatches;
    a.batch = c.batch();
    a.predicted_compute_mem = assignment_compute_memory(p.model(i), a);
    const LayerLatency lat = p.layer_latency(i, c);
    plan.predicted_layer_fwd = std::max(plan.predicted_layer_fwd, lat.t_fwd);
    plan.predicted_layer_bwd = std::max(plan.predicted_layer_bwd, lat.t_bwd);
    plan.uneven_sharding_used = plan.uneven_sharding_used || lat.used_uneven_comm;
    plan.assignments.push_back(std::move(a));
  }
  plan.predicted_iteration = static_cast<double>(p.model_spec().layers) *
                             (plan.predicted_layer_fwd + plan.predicted_layer_bwd);
  return plan;
}

namespace {

OptimizeResult finish(const PlanningProblem& p, const std::vector<ComputeChoice>& choices,
                      const OptimizerOptions& options, OptimizerReport report) {
  OptimizeResult out;
  out.plan = plan_from_choices(p, choices);
  out.plan = partition_state(std::move(out.plan), p.cluster(), p.model_spec(), p.perf(),
                             options.partition_quanta);
  report.assumed_uneven = out.plan.uneven_sharding_used;
  const double even = 1.0 / static_cast<double>(p.gpus());
  const double quantum = 1.0 / static_cast<double>(options.partition_quanta);
  for (const auto& a : out.plan.assignments) {
    if (std::abs(a.state_ratio - even) > quantum) report.partition_uneven = true;
  }
  out.report = report;
  return out;
}

void require_enough_batch(const PlanningProblem& p, const OptimizerOptions& options) {
  if (!options.allow_idle && p.batch() < static_cast<std::int64_t>(p.gpus())) {
    throw InfeasibleError("I", "global batch " + std::to_string(p.batch()) + " is smaller than the " +
                                   std::to_string(p.gpus()) +
                                   " GPUs that each need at least one sample (constraint I); "
                                   "allow idle GPUs to proceed");
  }
}

[[noreturn]] void throw_no_plan(bool some_batch_fits) {
  if (some_batch_fits) {
    throw InfeasibleError("III", "training state plus compute memory exceeds the cluster's aggregate "
                                 "effective capacity for every assignment (constraint III)");
  }
  throw InfeasibleError("II", "no per-GPU microbatch assignment covers the global batch within "
                              "per-GPU compute memory (constraints I and II)");
}

}  // namespace

OptimizeResult dp_optimize(const ClusterSpec& cluster, const ModelSpec& model, const PerfModelSet& perf,
                           const OptimizerOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const PlanningProblem p(cluster, model, perf);
  require_enough_batch(p, options);

  OptimizerReport report;
  const Millis bound = options.prune ? unit_microbatch_bound(p, options.allow_idle) : kInfinity;
  const DpTable table = build_dp_table(p, options, bound, report);

  const std::int64_t batch = p.batch();
  const std::size_t n = p.gpus();
  Millis best = kInfinity;
  std::int64_t best_k = -1;
  bool any_finite = false;
  for (std::int64_t k = 0; k <= batch; ++k) {
    const Millis v = table.at(n, batch, k);
    if (!std::isfinite(v)) continue;
    any_finite = true;
    if (v < best && p.aggregate_fits(k)) {
      best = v;
      best_k = k;
    }
  }
  if (best_k < 0) throw_no_plan(any_finite);

  std::vector<ComputeChoice> choices(n);
  std::int64_t j = batch, k = best_k;
  for (std::size_t i = n; i >= 1; --i) {
    const auto c = table.choice(i, j, k);
    if (!c) throw std::logic_error("DP backtrack reached an unset cell");
    choices[i - 1] = *c;
    j -= c->batch();
    k -= c->microbatch;
  }
  report.objective = best;
  report.chosen_k = best_k;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return finish(p, choices, options, report);
}

OptimizeResult brute_force_optimize(const ClusterSpec& cluster, const ModelSpec& model,
                                    const PerfModelSet& perf, const OptimizerOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (cluster.gpus.size() > kBruteForceMaxGpus || model.global_batch > kBruteForceMaxBatch) {
    throw SizeGuardError("exhaustive search is limited to " + std::to_string(kBruteForceMaxGpus) +
                         " GPUs and batch " + std::to_string(kBruteForceMaxBatch));
  }
  const PlanningProblem p(cluster, model, perf);
  require_enough_batch(p, options);
  const std::size_t n = p.gpus();
  const std::int64_t batch = p.batch();

  std::vector<std::vector<std::pair<ComputeChoice, Millis>>> options_per_gpu(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (options.allow_idle) options_per_gpu[i].push_back({{0, 0}, p.layer_latency(i, {0, 0}).total()});
    for (std::int64_t m = 1; m <= batch; ++m) {
      if (!p.compute_fits(i, m)) continue;
      for (std::int64_t l = 1; m * l <= batch; ++l) {
        options_per_gpu[i].push_back({{m, l}, p.layer_latency(i, {m, l}).total()});
      }
    }
  }

  OptimizerReport report;
  std::vector<ComputeChoice> current(n), best_choices;
  Millis best = kInfinity;
  std::int64_t best_k = -1;
  bool any_batch_fit = false;

  auto recurse = [&](auto&& self, std::size_t i, std::int64_t remaining, std::int64_t mass,
                     Millis worst) -> void {
    if (i == n) {
      if (remaining != 0) return;
      ++report.transitions_evaluated;
      any_batch_fit = true;
      if (!p.aggregate_fits(mass)) return;
      if (worst < best || (worst == best && mass < best_k)) {
        best = worst;
        best_k = mass;
        best_choices = current;
      }
      return;
    }
    for (const auto& [c, cost] : options_per_gpu[i]) {
      if (c.batch() > remaining) continue;
      current[i] = c;
      self(self, i + 1, remaining - c.batch(), mass + c.microbatch, std::max(worst, cost));
    }
  };
  recurse(recurse, 0, batch, 0, 0.0);
  if (best_k < 0) throw_no_plan(any_batch_fit);

  report.objective = best;
  report.chosen_k = best_k;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return finish(p, best_choices, options, report);
}

std::uint64_t complexity_budget(std::int64_t gpus, std::int64_t batch) {
  std::uint64_t per_gpu = 0;
  for (std::int64_t j = 1; j <= batch; ++j) {
    for (std::int64_t m = 1; m <= j; ++m) {
      per_gpu += static_cast<std::uint64_t>(j / m) * static_cast<std::uint64_t>(j - m + 1);
    }
  }
  return static_cast<std::uint64_t>(std::max<std::int64_t>(gpus, 0)) * per_gpu;
}

}  // namespace hetplan
