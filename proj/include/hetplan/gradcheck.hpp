// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace hetplan {

using GradVector = std::vector<double>;

// Per-sample gradients grouped by GPU; GPU i holds b_i samples.
struct GradFixture {
  std::vector<std::vector<GradVector>> per_gpu;

  std::int64_t global_batch() const;
  std::size_t dimension() const;
};

// (1/N) sum_i (N b_i / B) (1/b_i) sum_j g_ij, summing locally per GPU first.
// Throws ValidationError on dimension mismatch or an empty GPU.
GradVector weighted_combine(const GradFixture& fixture);

// Plain (1/B) sum over all samples in index order.
GradVector global_mean(const GradFixture& fixture);

// max_k |a_k - b_k| / max_k |b_k|; absolute error when b is all zero.
double max_relative_error(const GradVector& a, const GradVector& b);

GradFixture random_grad_fixture(std::uint64_t seed, std::size_t max_gpus = 8,
                                std::int64_t max_local_batch = 16, std::size_t max_dim = 32);

}  // namespace hetplan
