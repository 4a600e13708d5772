// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "hetplan/core_model.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan {

struct Instance {
  ClusterSpec cluster;
  ModelSpec model;
  PerfModelSet perf;
};

struct InstanceLimits {
  std::size_t min_gpus = 1;
  std::size_t max_gpus = 4;
  std::int64_t min_batch = 2;
  std::int64_t max_batch = 12;
  // Fraction of instances whose capacities are drawn tight enough that
  // some or all assignments become infeasible.
  double tight_fraction = 0.3;
};

// Random affine latency models and memory models sharing one slope.
Instance random_instance(std::uint64_t seed, const InstanceLimits& limits = {});

struct ComputeBoundLimits {
  std::size_t min_gpus = 1;
  std::size_t max_gpus = 4;
  std::int64_t min_batch = 4;
  std::int64_t max_batch = 24;
  std::int64_t min_layers = 8;
  std::int64_t max_layers = 32;
  // Collective latencies as a fraction of the fastest per-microbatch
  // forward time.
  double max_comm_fraction = 0.05;
  // One backward/forward ratio for every GPU, with identical table noise,
  // so the same GPU is slowest in both passes. When false each GPU draws
  // its own ratio.
  bool shared_backward_ratio = true;
};

// Ample memory, cheap collectives: every plan the optimizer emits is
// compute-bound.
Instance random_compute_bound_instance(std::uint64_t seed, const ComputeBoundLimits& limits = {});

}  // namespace hetplan
