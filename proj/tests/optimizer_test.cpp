// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "hetplan/errors.hpp"
#include "hetplan/json_io.hpp"
#include "hetplan/optimizer.hpp"
#include "hetplan/plan_validation.hpp"
#include "hetplan/random_instances.hpp"
#include "test_support.hpp"

namespace hetplan {
namespace {

using testing::fixture;

struct Verdict {
  bool feasible = false;
  Millis objective = 0;
  std::string constraint;
  TrainPlan plan;
};

template <typename Solver>
Verdict solve(Solver solver, const Instance& inst, const OptimizerOptions& opt = {}) {
  Verdict v;
  try {
    const OptimizeResult r = solver(inst.cluster, inst.model, inst.perf, opt);
    v.feasible = true;
    v.objective = r.report.objective;
    v.plan = r.plan;
  } catch (const InfeasibleError& e) {
    v.constraint = e.constraint();
  }
  return v;
}

TEST(DpOracle, MatchesExhaustiveSearch) {
  int feasible = 0, infeasible = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Instance inst = random_instance(seed);
    for (bool idle : {false, true}) {
      OptimizerOptions opt;
      opt.allow_idle = idle;
      const Verdict dp = solve(dp_optimize, inst, opt);
      const Verdict bf = solve(brute_force_optimize, inst, opt);
      ASSERT_EQ(dp.feasible, bf.feasible) << "seed " << seed;
      if (!dp.feasible) {
        ++infeasible;
        continue;
      }
      ++feasible;
      EXPECT_NEAR(dp.objective, bf.objective, 1e-9 * bf.objective) << "seed " << seed;
      EXPECT_TRUE(validate_plan(dp.plan, inst.cluster, inst.model, inst.perf).empty()) << "seed " << seed;
      EXPECT_TRUE(validate_plan(bf.plan, inst.cluster, inst.model, inst.perf).empty()) << "seed " << seed;
    }
  }
  EXPECT_GT(feasible, 50);
  EXPECT_GT(infeasible, 10);
}

TEST(DpOracle, PruningDoesNotChangeThePlan) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Instance inst = random_instance(seed);
    OptimizerOptions on, off;
    off.prune = false;
    const Verdict a = solve(dp_optimize, inst, on);
    const Verdict b = solve(dp_optimize, inst, off);
    ASSERT_EQ(a.feasible, b.feasible);
    if (a.feasible) {
      EXPECT_EQ(a.objective, b.objective);
      EXPECT_EQ(a.plan, b.plan);
    }
  }
}

TEST(DpOracle, ThreadCountDoesNotChangeThePlan) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Instance inst = random_instance(seed);
    OptimizerOptions one, many;
    many.threads = 3;
    const Verdict a = solve(dp_optimize, inst, one);
    const Verdict b = solve(dp_optimize, inst, many);
    ASSERT_EQ(a.feasible, b.feasible);
    if (a.feasible) EXPECT_EQ(a.plan, b.plan);
  }
}

Instance two_l4(std::int64_t batch) {
  Instance inst;
  inst.perf = testing::fit_all("bertlarge_clusterA.json");
  inst.cluster = load_cluster(fixture("cluster_two_l4.json"));
  inst.model = load_model(fixture("models/bert_large.json"));
  inst.model.global_batch = batch;
  return inst;
}

TEST(Pigeonhole, BatchBelowGpuCountIsInfeasible) {
  const Instance inst = two_l4(1);
  try {
    dp_optimize(inst.cluster, inst.model, inst.perf);
    FAIL() << "expected infeasible";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), "I");
  }
}

TEST(Pigeonhole, IdleGpuMakesItFeasible) {
  const Instance inst = two_l4(1);
  OptimizerOptions opt;
  opt.allow_idle = true;
  const OptimizeResult dp = dp_optimize(inst.cluster, inst.model, inst.perf, opt);
  const OptimizeResult bf = brute_force_optimize(inst.cluster, inst.model, inst.perf, opt);
  int idle = 0;
  for (const auto& a : dp.plan.assignments) idle += a.idle() ? 1 : 0;
  EXPECT_EQ(idle, 1);
  EXPECT_EQ(dp.report.objective, bf.report.objective);
  EXPECT_TRUE(validate_plan(dp.plan, inst.cluster, inst.model, inst.perf).empty());
}

TEST(ClusterA, BertLargeNeedsIdleP100s) {
  Instance inst;
  inst.perf = testing::fit_all("bertlarge_clusterA.json");
  inst.cluster = load_cluster(fixture("cluster_a.json"));
  inst.model = load_model(fixture("models/bert_large.json"));
  inst.model.global_batch = 256;
  try {
    dp_optimize(inst.cluster, inst.model, inst.perf);
    FAIL() << "expected infeasible";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), "II");
  }
  OptimizerOptions opt;
  opt.allow_idle = true;
  const OptimizeResult r = dp_optimize(inst.cluster, inst.model, inst.perf, opt);
  EXPECT_TRUE(validate_plan(r.plan, inst.cluster, inst.model, inst.perf).empty());
  const auto& as = r.plan.assignments;
  for (std::size_t i = 1; i < as.size(); ++i) EXPECT_GE(as[0].batch, as[i].batch) << as[i].gpu_id;
  EXPECT_TRUE(as[6].idle());
  EXPECT_TRUE(as[7].idle());
  // L4s take roughly half the A6000's batch.
  for (std::size_t i : {1u, 2u}) {
    EXPECT_GT(as[i].batch * 10, as[0].batch * 3);
    EXPECT_LT(as[i].batch * 10, as[0].batch * 8);
  }
}

TEST(Homogeneous, DivisibleComputeBoundBatchSplitsEvenly) {
  ComputeBoundLimits lim;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Instance inst = random_compute_bound_instance(seed, lim);
    GpuPerfModel model = inst.perf.models.begin()->second;
    model.fwd = LatencyModel({}, model.fwd.slope(), model.fwd.intercept());
    model.bwd = LatencyModel({}, model.bwd.slope(), model.bwd.intercept());
    for (auto& [k, m] : inst.perf.models) m = model;
    for (auto& g : inst.cluster.gpus) g.memory_capacity = inst.cluster.gpus[0].memory_capacity;
    inst.model.global_batch = static_cast<std::int64_t>(inst.cluster.size()) * 4;
    const OptimizeResult r = dp_optimize(inst.cluster, inst.model, inst.perf);
    for (const auto& a : r.plan.assignments) {
      EXPECT_EQ(a.batch, 4) << "seed " << seed;
      EXPECT_EQ(a.microbatch, r.plan.assignments[0].microbatch);
    }
  }
}

TEST(Permutation, ObjectiveIsInvariantUnderGpuOrder) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Instance inst = random_instance(seed);
    const Verdict a = solve(dp_optimize, inst);
    std::reverse(inst.cluster.gpus.begin(), inst.cluster.gpus.end());
    const Verdict b = solve(dp_optimize, inst);
    ASSERT_EQ(a.feasible, b.feasible);
    if (a.feasible) EXPECT_NEAR(a.objective, b.objective, 1e-12 * a.objective);
  }
}

TEST(SizeGuard, BruteForceRefusesLargeInstances) {
  Instance inst = two_l4(17);
  EXPECT_THROW(brute_force_optimize(inst.cluster, inst.model, inst.perf), SizeGuardError);
}

std::uint64_t count_transitions(std::int64_t gpus, std::int64_t batch) {
  std::uint64_t n = 0;
  for (std::int64_t i = 0; i < gpus; ++i) {
    for (std::int64_t j = 1; j <= batch; ++j) {
      for (std::int64_t k = 1; k <= j; ++k) {
        for (std::int64_t m = 1; m <= k; ++m) {
          for (std::int64_t l = 1; l * m <= j; ++l) ++n;
        }
      }
    }
  }
  return n;
}

TEST(Complexity, MatchesLoopEnumeration) {
  EXPECT_EQ(complexity_budget(1, 1), 1u);
  for (std::int64_t b : {1, 2, 5, 17, 40}) {
    EXPECT_EQ(complexity_budget(3, b), count_transitions(3, b)) << "B=" << b;
  }
  const double big = static_cast<double>(complexity_budget(64, 512));
  const double order = 64.0 * std::pow(512.0, 3) * std::log(512.0);
  EXPECT_GT(big, order / 20);
  EXPECT_LT(big, order * 20);
}

TEST(Table, BacktrackReproducesObjective) {
  const Instance inst = random_compute_bound_instance(3);
  const PlanningProblem p(inst.cluster, inst.model, inst.perf);
  OptimizerReport report;
  const DpTable t = build_dp_table(p, {}, kInfinity, report);
  EXPECT_EQ(t.at(0, 0, 0), 0.0);
  const OptimizeResult r = dp_optimize(inst.cluster, inst.model, inst.perf);
  EXPECT_EQ(t.at(p.gpus(), p.batch(), r.report.chosen_k), r.report.objective);
  std::vector<ComputeChoice> choices;
  for (const auto& a : r.plan.assignments) choices.push_back({a.microbatch, a.num_microbatches});
  EXPECT_EQ(plan_objective(p, choices), r.report.objective);
}

}  // namespace
}  // namespace hetplan
