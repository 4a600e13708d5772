// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hetplan {

// Memory is carried in bytes, latency in milliseconds.
using Bytes = double;
using Millis = double;

inline constexpr double kBytesPerGiB = 1024.0 * 1024.0 * 1024.0;

inline constexpr Bytes gib_to_bytes(double gib) { return gib * kBytesPerGiB; }
inline constexpr double bytes_to_gib(Bytes b) { return b / kBytesPerGiB; }

struct GpuSpec {
  std::string id;
  Bytes memory_capacity = 0;
  std::string profile_key;

  bool operator==(const GpuSpec&) const = default;
};

// Collective latencies for one FSDP unit with evenly sharded inputs.
struct CommProfile {
  Millis allgather_even = 0;
  Millis reducescatter_even = 0;
  double uneven_overhead = 0.15;

  bool operator==(const CommProfile&) const = default;
};

struct ClusterSpec {
  std::vector<GpuSpec> gpus;  // order is significant
  CommProfile comm;
  double mem_cap_fraction = 0.80;

  std::size_t size() const { return gpus.size(); }
  Bytes effective_capacity(std::size_t i) const {
    return mem_cap_fraction * gpus[i].memory_capacity;
  }
  Bytes total_effective_capacity() const;

  bool operator==(const ClusterSpec&) const = default;
};

struct ModelSpec {
  std::int64_t layers = 1;
  std::int64_t params_per_layer = 1;
  double bytes_per_param_state = 16;
  std::int64_t global_batch = 1;

  // Parameters + gradients + optimizer moments for the whole model.
  Bytes state_bytes() const {
    return bytes_per_param_state * static_cast<double>(layers) *
           static_cast<double>(params_per_layer);
  }

  bool operator==(const ModelSpec&) const = default;
};

// (microbatch, value) sample.
template <typename T>
struct ProfilePoint {
  std::int64_t microbatch = 0;
  T value{};

  bool operator==(const ProfilePoint&) const = default;
};

struct ComputeProfile {
  std::string profile_key;
  std::vector<ProfilePoint<Millis>> fwd;
  std::vector<ProfilePoint<Millis>> bwd;

  bool operator==(const ComputeProfile&) const = default;
};

struct MemoryProfile {
  std::string profile_key;
  std::vector<ProfilePoint<Bytes>> points;

  bool operator==(const MemoryProfile&) const = default;
};

// One profile document: latency and compute-memory samples for a GPU type.
struct ProfileDocument {
  ComputeProfile compute;
  MemoryProfile memory;

  const std::string& key() const { return compute.profile_key; }
  bool operator==(const ProfileDocument&) const = default;
};

// Contiguous parameter range owned by one GPU within one FSDP unit.
struct ShardRange {
  std::int64_t offset = 0;
  std::int64_t count = 0;

  bool operator==(const ShardRange&) const = default;
};

struct UnitShardPlan {
  std::int64_t units = 0;
  // shards[unit][gpu]
  std::vector<std::vector<ShardRange>> shards;
  std::int64_t uneven_units = 0;

  bool operator==(const UnitShardPlan&) const = default;
};

// m == 0 and num_microbatches == 0 marks an idle GPU (no compute, may hold state).
struct GpuAssignment {
  std::string gpu_id;
  std::int64_t microbatch = 0;
  std::int64_t num_microbatches = 0;
  std::int64_t batch = 0;
  double state_ratio = 0;
  Bytes predicted_compute_mem = 0;
  Bytes predicted_state_mem = 0;

  bool idle() const { return microbatch == 0 && num_microbatches == 0; }
  bool operator==(const GpuAssignment&) const = default;
};

struct TrainPlan {
  std::vector<GpuAssignment> assignments;
  Millis predicted_layer_fwd = 0;
  Millis predicted_layer_bwd = 0;
  Millis predicted_iteration = 0;
  bool uneven_sharding_used = false;
  std::optional<UnitShardPlan> unit_shards;

  std::int64_t total_batch() const;
  std::int64_t total_microbatch_mass() const;
  bool operator==(const TrainPlan&) const = default;
};

// Throw ValidationError on a broken invariant.
void validate_cluster(const ClusterSpec& cluster);
void validate_model(const ModelSpec& model);
void validate_profile(const ProfileDocument& profile);

}  // namespace hetplan
