// SPDX-License-Identifier: Apache-2.0
#include "hetplan/random_instances.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace hetplan {

namespace {

struct Draw {
  std::mt19937_64 rng;

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  }
  bool chance(double p) { return real(0.0, 1.0) < p; }
};

// Affine latency with a short, slightly noisy profiled table in front.
LatencyModel affine_latency(Draw& d, double intercept, double slope) {
  std::vector<Millis> table(static_cast<std::size_t>(d.integer(0, 3)));
  for (std::size_t k = 0; k < table.size(); ++k) {
    table[k] = (intercept + slope * static_cast<double>(k + 1)) * d.real(0.95, 1.05);
  }
  return LatencyModel(std::move(table), slope, intercept);
}

LatencyModel scaled(const LatencyModel& m, double factor) {
  std::vector<Millis> table = m.table();
  for (auto& v : table) v *= factor;
  return LatencyModel(std::move(table), m.slope() * factor, m.intercept() * factor);
}

std::int64_t params_for_state(Bytes state, std::int64_t layers, double bytes_per_param) {
  const double p = state / (bytes_per_param * static_cast<double>(layers));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(p)));
}

}  // namespace

Instance random_instance(std::uint64_t seed, const InstanceLimits& limits) {
  Draw d{std::mt19937_64(seed)};
  Instance inst;
  const auto n = static_cast<std::size_t>(
      d.integer(static_cast<std::int64_t>(limits.min_gpus), static_cast<std::int64_t>(limits.max_gpus)));
  const bool tight = d.chance(limits.tight_fraction);
  inst.model.global_batch = d.integer(limits.min_batch, limits.max_batch);
  inst.model.layers = d.integer(1, 6);
  const Bytes state = gib_to_bytes(d.real(0.5, tight ? 16.0 : 6.0) * static_cast<double>(n));
  inst.model.params_per_layer = params_for_state(state, inst.model.layers, inst.model.bytes_per_param_state);

  inst.cluster.comm.allgather_even = d.real(0.0, 20.0);
  inst.cluster.comm.reducescatter_even = d.real(0.0, 20.0);
  const double mem_slope = gib_to_bytes(d.real(0.2, 1.0));
  const Bytes share = inst.model.state_bytes() / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::string key = "g" + std::to_string(i);
    GpuPerfModel m;
    const double f_int = d.real(0.0, 10.0), f_slope = d.real(1.0, 20.0);
    const double bwd_scale = d.real(1.5, 2.5);
    m.fwd = affine_latency(d, f_int, f_slope);
    m.bwd = affine_latency(d, f_int * bwd_scale, f_slope * bwd_scale);
    m.memory.slope = mem_slope;
    m.memory.intercept = gib_to_bytes(d.real(1.0, 8.0));
    inst.perf.models.emplace(key, m);

    // Largest microbatch that fits, plus some room for state.
    const std::int64_t m_fit = tight ? d.integer(0, 2) : d.integer(1, inst.model.global_batch);
    const Bytes room = tight ? d.real(0.0, 0.5) * share : d.real(0.0, 2.0) * share;
    const Bytes effective = m.memory.intercept + mem_slope * (static_cast<double>(m_fit) + d.real(0.0, 0.99)) + room;
    inst.cluster.gpus.push_back({"gpu" + std::to_string(i), effective / inst.cluster.mem_cap_fraction, key});
  }
  return inst;
}

Instance random_compute_bound_instance(std::uint64_t seed, const ComputeBoundLimits& limits) {
  Draw d{std::mt19937_64(seed)};
  Instance inst;
  const auto n = static_cast<std::size_t>(
      d.integer(static_cast<std::int64_t>(limits.min_gpus), static_cast<std::int64_t>(limits.max_gpus)));
  inst.model.global_batch = d.integer(std::max<std::int64_t>(limits.min_batch, static_cast<std::int64_t>(n)),
                                      std::max(limits.max_batch, static_cast<std::int64_t>(n)));
  inst.model.layers = d.integer(limits.min_layers, limits.max_layers);
  const Bytes state = gib_to_bytes(d.real(1.0, 4.0) * static_cast<double>(n));
  inst.model.params_per_layer = params_for_state(state, inst.model.layers, inst.model.bytes_per_param_state);

  const double mem_slope = gib_to_bytes(d.real(0.2, 1.0));
  const double shared_scale = d.real(1.5, 2.5);
  Millis fastest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string key = "g" + std::to_string(i);
    GpuPerfModel m;
    const double f_int = d.real(0.5, 5.0), f_slope = d.real(0.5, 5.0);
    m.fwd = affine_latency(d, f_int, f_slope);
    if (limits.shared_backward_ratio) {
      m.bwd = scaled(m.fwd, shared_scale);
    } else {
      const double bwd_scale = d.real(1.5, 2.5);
      m.bwd = affine_latency(d, f_int * bwd_scale, f_slope * bwd_scale);
    }
    m.memory.slope = mem_slope;
    m.memory.intercept = gib_to_bytes(d.real(1.0, 4.0));
    fastest = std::min(fastest, m.fwd.eval(1));
    const Bytes effective = 2.0 * (m.memory.eval(inst.model.global_batch) + inst.model.state_bytes());
    inst.perf.models.emplace(key, m);
    inst.cluster.gpus.push_back({"gpu" + std::to_string(i), effective / inst.cluster.mem_cap_fraction, key});
  }
  inst.cluster.comm.allgather_even = d.real(0.0, limits.max_comm_fraction) * fastest;
  inst.cluster.comm.reducescatter_even = d.real(0.0, limits.max_comm_fraction) * fastest;
  return inst;
}

}  // namespace hetplan
