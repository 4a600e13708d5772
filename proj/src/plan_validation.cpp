// SPDX-License-Identifier: Apache-2.0
#include "hetplan/plan_validation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "hetplan/errors.hpp"

namespace hetplan {

const char* constraint_name(Constraint c) {
  switch (c) {
    case Constraint::kStructure: return "structure";
    case Constraint::kBatchSum: return "constraint I (batch size)";
    case Constraint::kComputeMemory: return "constraint II (individual memory)";
    case Constraint::kAggregateMemory: return "constraint III (aggregate memory)";
    case Constraint::kStateRatioSum: return "state ratios";
    case Constraint::kGpuCapacity: return "GPU capacity";
  }
  return "unknown";
}

Bytes aggregate_compute_memory(const ClusterSpec& cluster, const PerfModelSet& perf,
                               double shared_slope, std::int64_t k) {
  Bytes floor = 0;
  for (const auto& gpu : cluster.gpus) floor += std::max(0.0, perf.at(gpu.profile_key).memory.intercept);
  return floor + shared_slope * static_cast<double>(k);
}

Bytes assignment_compute_memory(const GpuPerfModel& model, const GpuAssignment& a) {
  return a.idle() ? 0.0 : model.memory.eval(a.microbatch);
}

namespace {

std::string gib(Bytes b) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << bytes_to_gib(b) << " GiB";
  return os.str();
}

}  // namespace

std::vector<Violation> validate_plan(const TrainPlan& plan, const ClusterSpec& cluster,
                                     const ModelSpec& model, const PerfModelSet& perf) {
  std::vector<Violation> out;
  auto add = [&](Constraint c, std::string gpu, std::string msg) {
    out.push_back({c, std::move(gpu), std::move(msg)});
  };

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < cluster.gpus.size(); ++i) by_id[cluster.gpus[i].id] = i;

  std::vector<int> seen(cluster.gpus.size(), 0);
  std::vector<const GpuAssignment*> per_gpu(cluster.gpus.size(), nullptr);
  for (const auto& a : plan.assignments) {
    auto it = by_id.find(a.gpu_id);
    if (it == by_id.end()) {
      add(Constraint::kStructure, a.gpu_id, "assignment names a GPU that is not in the cluster");
      continue;
    }
    if (seen[it->second]++ > 0) {
      add(Constraint::kStructure, a.gpu_id, "GPU assigned more than once");
      continue;
    }
    per_gpu[it->second] = &a;
  }
  for (std::size_t i = 0; i < cluster.gpus.size(); ++i) {
    if (!per_gpu[i]) add(Constraint::kStructure, cluster.gpus[i].id, "GPU missing from plan");
  }

  const Bytes state = model.state_bytes();
  double ratio_sum = 0;
  std::int64_t batch_sum = 0;
  std::int64_t mass = 0;
  bool usable = true;

  for (std::size_t i = 0; i < cluster.gpus.size(); ++i) {
    const GpuAssignment* a = per_gpu[i];
    if (!a) continue;
    const std::string& id = a->gpu_id;
    const bool idle = a->idle();
    if (!idle && (a->microbatch < 1 || a->num_microbatches < 1)) {
      add(Constraint::kStructure, id, "microbatch and num_microbatches must both be >= 1 (or both 0 for idle)");
      usable = false;
    }
    if (a->batch != a->microbatch * a->num_microbatches) {
      add(Constraint::kStructure, id, "batch != microbatch * num_microbatches");
    }
    if (!(a->state_ratio >= 0 && a->state_ratio <= 1)) {
      add(Constraint::kStructure, id, "state_ratio outside [0, 1]");
    }
    const Bytes expected_state = a->state_ratio * state;
    if (std::abs(a->predicted_state_mem - expected_state) > kRatioSumTolerance * std::max(state, 1.0)) {
      add(Constraint::kStructure, id, "predicted_state_mem != state_ratio * M_state");
    }
    ratio_sum += a->state_ratio;
    batch_sum += a->batch;
    mass += a->microbatch;

    const GpuPerfModel* gm = nullptr;
    auto mit = perf.models.find(cluster.gpus[i].profile_key);
    if (mit != perf.models.end()) gm = &mit->second;
    if (!gm) {
      add(Constraint::kStructure, id, "no fitted model for profile_key " + cluster.gpus[i].profile_key);
      usable = false;
      continue;
    }
    const Bytes cap = cluster.effective_capacity(i);
    const Bytes compute = assignment_compute_memory(*gm, *a);
    if (!idle && compute > cap) {
      add(Constraint::kComputeMemory, id,
          "M_compute(" + std::to_string(a->microbatch) + ") = " + gib(compute) +
              " exceeds effective capacity " + gib(cap));
    }
    if (compute + a->predicted_state_mem > cap) {
      add(Constraint::kGpuCapacity, id,
          "compute " + gib(compute) + " + state " + gib(a->predicted_state_mem) +
              " exceeds effective capacity " + gib(cap));
    }
  }

  if (batch_sum != model.global_batch) {
    add(Constraint::kBatchSum, "",
        "sum of local batches " + std::to_string(batch_sum) + " != global batch " +
            std::to_string(model.global_batch));
  }
  if (std::abs(ratio_sum - 1.0) > kRatioSumTolerance) {
    std::ostringstream os;
    os.precision(12);
    os << "state ratios sum to " << ratio_sum;
    add(Constraint::kStateRatioSum, "", os.str());
  }
  if (usable) {
    try {
      const double slope = shared_memory_slope(cluster, perf);
      const Bytes need = state + aggregate_compute_memory(cluster, perf, slope, mass);
      const Bytes have = cluster.total_effective_capacity();
      if (need > have) {
        add(Constraint::kAggregateMemory, "",
            "state + aggregate compute " + gib(need) + " exceeds cluster capacity " + gib(have));
      }
    } catch (const ValidationError& e) {
      add(Constraint::kStructure, "", e.what());
    }
  }
  return out;
}

}  // namespace hetplan
