// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>

#include "hetplan/errors.hpp"
#include "hetplan/optimizer.hpp"
#include "hetplan/plan_validation.hpp"
#include "test_support.hpp"

namespace hetplan {
namespace {

constexpr double kGiB = kBytesPerGiB;

// Cluster whose GPUs all run the same fixed compute memory per GPU.
struct Fixture {
  ClusterSpec cluster;
  ModelSpec model;
  PerfModelSet perf;
  TrainPlan plan;
};

Fixture make_fixture(const std::vector<double>& caps_gib, const std::vector<double>& compute_gib, double state_gib) {
  Fixture s;
  s.cluster.mem_cap_fraction = 1.0;
  s.cluster.comm = {1.0, 1.0, 0.15};
  for (std::size_t i = 0; i < caps_gib.size(); ++i) {
    const std::string key = "k" + std::to_string(i);
    s.cluster.gpus.push_back({"gpu" + std::to_string(i), caps_gib[i] * kGiB, key});
    // M(1) equals the requested compute memory.
    s.perf.models[key] = testing::affine_model(1, 1, 2, 2, compute_gib[i] * kGiB - 0.25 * kGiB, 0.25 * kGiB);
    s.plan.assignments.push_back({"gpu" + std::to_string(i), 1, 1, 1, 0, 0, 0});
  }
  s.model.layers = 1;
  s.model.bytes_per_param_state = 16;
  s.model.params_per_layer = static_cast<std::int64_t>(state_gib * kGiB / 16);
  s.model.global_batch = static_cast<std::int64_t>(caps_gib.size());
  return s;
}

double max_utilization(const TrainPlan& plan, const ClusterSpec& c) {
  double u = 0;
  for (std::size_t i = 0; i < plan.assignments.size(); ++i) {
    const auto& a = plan.assignments[i];
    u = std::max(u, (a.predicted_compute_mem + a.predicted_state_mem) / c.effective_capacity(i));
  }
  return u;
}

// Continuous optimum: smallest t with sum_i max(0, t*cap_i - compute_i) >= state.
double water_level(const std::vector<double>& cap, const std::vector<double>& compute, double state) {
  double lo = 0, hi = 1;
  for (std::size_t i = 0; i < cap.size(); ++i) lo = std::max(lo, compute[i] / cap[i]);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double room = 0;
    for (std::size_t i = 0; i < cap.size(); ++i) room += std::max(0.0, mid * cap[i] - compute[i]);
    (room >= state ? hi : lo) = mid;
  }
  return hi;
}

TEST(Partition, WorkedTwoGpuInstance) {
  Fixture s = make_fixture({24, 12}, {6, 6}, 12);
  const TrainPlan p = partition_state(s.plan, s.cluster, s.model, s.perf);
  const double quantum = s.model.state_bytes() / 1024;
  const double state = s.model.state_bytes();
  // (6 + x) / 24 = (6 + 12 - x) / 12  =>  x = 10 GiB on the P40-sized GPU.
  const double x = (24.0 * 18.0 - 12.0 * 6.0) / 36.0 * kGiB * (state / (12 * kGiB));
  EXPECT_NEAR(p.assignments[0].predicted_state_mem, x, quantum);
  EXPECT_NEAR(p.assignments[1].predicted_state_mem, state - x, quantum);
  EXPECT_NEAR(max_utilization(p, s.cluster), 2.0 / 3.0, quantum / (12 * kGiB));
  EXPECT_TRUE(validate_plan(p, s.cluster, s.model, s.perf).empty());
}

TEST(Partition, TiesGoToLowestIndex) {
  Fixture s = make_fixture({10, 10}, {2, 2}, 1);
  const TrainPlan p = partition_state(s.plan, s.cluster, s.model, s.perf, 3);
  EXPECT_DOUBLE_EQ(p.assignments[0].state_ratio, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.assignments[1].state_ratio, 1.0 / 3.0);
}

TEST(Partition, WithinOneQuantumOfContinuousOptimum) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> cap(4, 48), frac(0.1, 0.6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 4;
    std::vector<double> caps, compute;
    double room = 0;
    for (std::size_t i = 0; i < n; ++i) {
      caps.push_back(cap(rng));
      compute.push_back(caps.back() * frac(rng));
      room += caps.back() - compute.back();
    }
    const double state = room * std::uniform_real_distribution<double>(0.05, 0.9)(rng);
    Fixture s = make_fixture(caps, compute, state);
    const double state_bytes = s.model.state_bytes();
    const TrainPlan p = partition_state(s.plan, s.cluster, s.model, s.perf);
    std::vector<double> cap_b, comp_b;
    for (std::size_t i = 0; i < n; ++i) {
      cap_b.push_back(s.cluster.effective_capacity(i));
      comp_b.push_back(p.assignments[i].predicted_compute_mem);
    }
    const double opt = water_level(cap_b, comp_b, state_bytes);
    const double quantum = state_bytes / 1024;
    const double slack = quantum / *std::min_element(cap_b.begin(), cap_b.end());
    EXPECT_LE(max_utilization(p, s.cluster), opt + slack + 1e-12) << "trial " << trial;
    EXPECT_TRUE(validate_plan(p, s.cluster, s.model, s.perf).empty()) << "trial " << trial;
  }
}

TEST(Partition, MatchesExhaustiveQuantaSearch) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> cap(4, 48), frac(0.1, 0.6);
  constexpr std::int64_t kQuanta = 12;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 4;
    std::vector<double> caps, compute;
    double room = 0;
    for (std::size_t i = 0; i < n; ++i) {
      caps.push_back(cap(rng));
      compute.push_back(caps.back() * frac(rng));
      room += caps.back() - compute.back();
    }
    Fixture s = make_fixture(caps, compute, room * 0.5);
    const double state = s.model.state_bytes();
    const TrainPlan p = partition_state(s.plan, s.cluster, s.model, s.perf, kQuanta);
    std::vector<std::int64_t> counts(n, 0);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::int64_t)> rec = [&](std::size_t i, std::int64_t left) {
      if (i + 1 == n) {
        counts[i] = left;
        double u = 0;
        for (std::size_t g = 0; g < n; ++g) {
          const double mem = p.assignments[g].predicted_compute_mem + state * static_cast<double>(counts[g]) / kQuanta;
          if (mem > s.cluster.effective_capacity(g)) return;
          u = std::max(u, mem / s.cluster.effective_capacity(g));
        }
        best = std::min(best, u);
        return;
      }
      for (std::int64_t c = 0; c <= left; ++c) {
        counts[i] = c;
        rec(i + 1, left - c);
      }
    };
    rec(0, kQuanta);
    double min_cap = s.cluster.effective_capacity(0);
    for (std::size_t g = 0; g < n; ++g) min_cap = std::min(min_cap, s.cluster.effective_capacity(g));
    EXPECT_LE(max_utilization(p, s.cluster), best + state / kQuanta / min_cap + 1e-12) << "trial " << trial;
  }
}

TEST(Partition, SpillsFractionallyWhenNoWholeQuantumFits) {
  Fixture s = make_fixture({10, 10}, {9.99, 9.99}, 0.015);
  const TrainPlan p = partition_state(s.plan, s.cluster, s.model, s.perf, 1);
  EXPECT_NEAR(p.assignments[0].state_ratio + p.assignments[1].state_ratio, 1.0, 1e-9);
  EXPECT_TRUE(validate_plan(p, s.cluster, s.model, s.perf).empty());
}

TEST(Partition, InfeasibleWhenStateExceedsFreeMemory) {
  Fixture s = make_fixture({10, 10}, {8, 8}, 5);
  EXPECT_THROW(partition_state(s.plan, s.cluster, s.model, s.perf), InfeasibleError);
}

}  // namespace
}  // namespace hetplan
