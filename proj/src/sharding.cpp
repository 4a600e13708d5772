// SPDX-License-Identifier: Apache-2.0
#include "hetplan/sharding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hetplan/errors.hpp"

namespace hetplan {

namespace {

// Integer per-GPU totals summing exactly to `total` (largest remainder).
std::vector<std::int64_t> integer_targets(std::span<const double> ratios, std::int64_t total) {
  const std::size_t n = ratios.size();
  std::vector<std::int64_t> out(n);
  std::vector<double> frac(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = ratios[i] * static_cast<double>(total);
    out[i] = static_cast<std::int64_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  // Rounding can leave the floor sum off by more than n only through
  // float error; clamp by cycling.
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[order[r % n]];
  for (std::size_t r = n; assigned > total; ++r) {
    const std::size_t i = order[r % n];
    if (out[i] > 0) {
      --out[i];
      --assigned;
    }
  }
  return out;
}

std::vector<std::size_t> by_budget(const std::vector<std::int64_t>& budget) {
  std::vector<std::size_t> order(budget.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return budget[a] > budget[b]; });
  return order;
}

}  // namespace

bool is_even_shard(std::span<const ShardRange> unit) {
  if (unit.empty()) return true;
  auto [lo, hi] = std::minmax_element(unit.begin(), unit.end(),
                                      [](const ShardRange& a, const ShardRange& b) { return a.count < b.count; });
  return hi->count - lo->count <= 1;
}

UnitShardPlan assign_unit_shards(std::span<const double> ratios, const ModelSpec& model) {
  validate_model(model);
  if (ratios.empty()) throw ValidationError("no state ratios to shard by");
  double sum = 0;
  for (double r : ratios) {
    if (!(r >= 0)) throw ValidationError("state ratios must be nonnegative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("state ratios sum to " + std::to_string(sum) + ", not 1");
  }
  const std::size_t n = ratios.size();
  const std::int64_t unit_size = model.params_per_layer;
  std::vector<std::int64_t> budget = integer_targets(ratios, unit_size * model.layers);

  UnitShardPlan out;
  out.units = model.layers;
  const std::int64_t base = unit_size / static_cast<std::int64_t>(n);
  const std::int64_t extra = unit_size % static_cast<std::int64_t>(n);
  for (std::int64_t u = 0; u < model.layers; ++u) {
    std::vector<std::int64_t> count(n, 0);
    const auto order = by_budget(budget);
    bool even = true;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = order[r];
      count[i] = base + (static_cast<std::int64_t>(r) < extra ? 1 : 0);
      if (count[i] > budget[i]) even = false;
    }
    if (!even) {
      std::int64_t left = unit_size;
      std::fill(count.begin(), count.end(), 0);
      for (std::size_t i : order) {
        count[i] = std::min(budget[i], left);
        left -= count[i];
      }
    }
    std::vector<ShardRange> unit(n);
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < n; ++i) {
      unit[i] = {offset, count[i]};
      offset += count[i];
      budget[i] -= count[i];
    }
    if (!is_even_shard(unit)) ++out.uneven_units;
    out.shards.push_back(std::move(unit));
  }
  return out;
}

}  // namespace hetplan
