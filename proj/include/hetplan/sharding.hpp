// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "hetplan/core_model.hpp"

namespace hetplan {

// Splits each FSDP unit (one per layer) across GPUs so per-GPU totals follow
// `ratios` while as many units as possible keep the even split. Units are
// visited in layer order; a unit is sharded evenly whenever every GPU's
// remaining budget can absorb its even share, otherwise it is filled from
// the largest remaining budgets first. Throws ValidationError if the ratios
// do not sum to one within 1e-9.
UnitShardPlan assign_unit_shards(std::span<const double> ratios, const ModelSpec& model);

// True if counts differ by at most one parameter.
bool is_even_shard(std::span<const ShardRange> unit);

}  // namespace hetplan
