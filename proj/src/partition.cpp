// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <numeric>
#include <string>

#include "hetplan/errors.hpp"
#include "hetplan/optimizer.hpp"
#include "hetplan/plan_validation.hpp"

namespace hetplan {

TrainPlan partition_state(TrainPlan plan, const ClusterSpec& cluster, const ModelSpec& model,
                          const PerfModelSet& perf, std::int64_t quanta) {
  if (quanta < 1) throw ValidationError("partition quanta must be positive");
  const std::size_t n = cluster.gpus.size();
  if (plan.assignments.size() != n) {
    throw ValidationError("plan has " + std::to_string(plan.assignments.size()) +
                          " assignments for " + std::to_string(n) + " GPUs");
  }
  const Bytes state = model.state_bytes();
  const double q = static_cast<double>(quanta);
  std::vector<Bytes> compute(n), cap(n);
  std::vector<std::int64_t> count(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    compute[i] = assignment_compute_memory(perf.at(cluster.gpus[i].profile_key), plan.assignments[i]);
    cap[i] = cluster.effective_capacity(i);
  }
  auto held = [&](std::size_t i, std::int64_t c) {
    return compute[i] + (static_cast<double>(c) / q) * state;
  };

  std::int64_t placed = 0;
  for (; placed < quanta; ++placed) {
    std::size_t best = n;
    double best_util = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (held(i, count[i] + 1) > cap[i]) continue;
      const double util = held(i, count[i]) / cap[i];
      if (best == n || util < best_util) {
        best = i;
        best_util = util;
      }
    }
    if (best == n) break;
    ++count[best];
  }

  std::vector<double> ratio(n);
  std::vector<Bytes> share(n);
  for (std::size_t i = 0; i < n; ++i) {
    ratio[i] = static_cast<double>(count[i]) / q;
    share[i] = ratio[i] * state;
  }

  if (placed < quanta) {
    // No GPU can take a whole quantum: spread the rest over free space,
    // least utilized first.
    Bytes rest = state - std::accumulate(share.begin(), share.end(), 0.0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (compute[a] + share[a]) / cap[a] < (compute[b] + share[b]) / cap[b];
    });
    for (std::size_t i : order) {
      if (rest <= 0) break;
      const Bytes free = (cap[i] - compute[i] - share[i]) * (1.0 - 1e-12);
      if (free <= 0) continue;
      const Bytes take = std::min(free, rest);
      share[i] += take;
      ratio[i] = share[i] / state;
      rest -= take;
    }
    if (rest > kRatioSumTolerance * state) {
      throw InfeasibleError("III", "training state does not fit in the memory left after compute");
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    GpuAssignment& a = plan.assignments[i];
    a.predicted_compute_mem = compute[i];
    a.state_ratio = state > 0 ? ratio[i] : 1.0 / static_cast<double>(n);
    a.predicted_state_mem = a.state_ratio * state;
  }
  return plan;
}

}  // namespace hetplan
