// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "hetplan/errors.hpp"
#include "hetplan/json_io.hpp"
#include "hetplan/optimizer.hpp"
#include "hetplan/plan_validation.hpp"
#include "hetplan/sharding.hpp"
#include "test_support.hpp"

namespace hetplan {
namespace {

using testing::fixture;

bool has(const std::vector<Violation>& vs, Constraint c) {
  for (const auto& v : vs) {
    if (v.constraint == c) return true;
  }
  return false;
}

TEST(Cluster, LoadsEightGpuCluster) {
  const ClusterSpec c = load_cluster(fixture("cluster_a.json"));
  ASSERT_EQ(c.size(), 8u);
  EXPECT_EQ(c.gpus[0].memory_capacity, 48.0 * kBytesPerGiB);
  EXPECT_EQ(c.effective_capacity(7), 0.8 * 12.0 * kBytesPerGiB);
  EXPECT_EQ(c.comm.uneven_overhead, 0.15);
}

TEST(Cluster, RejectsDuplicateIds) {
  EXPECT_THROW(load_cluster(fixture("cluster_duplicate_ids.json")), ValidationError);
}

TEST(Cluster, RejectsUnknownProfileKey) {
  EXPECT_THROW(load_cluster(fixture("cluster_a.json"), {"bertlarge_a6000"}), ValidationError);
}

TEST(Cluster, RejectsUnknownFields) {
  Json doc = read_json_file(fixture("cluster_single.json"));
  doc["extra"] = 1;
  EXPECT_THROW(cluster_from_json(doc), ParseError);
  doc.erase("extra");
  doc["gpus"][0].erase("memory_gib");
  EXPECT_THROW(cluster_from_json(doc), ParseError);
}

TEST(Cluster, RejectsBadCapFraction) {
  Json doc = read_json_file(fixture("cluster_single.json"));
  doc["mem_cap_fraction"] = 1.5;
  EXPECT_THROW(validate_cluster(cluster_from_json(doc)), ValidationError);
}

TEST(Model, StateIsSixteenBytesPerParameter) {
  const ModelSpec m = load_model(fixture("models/bert_large.json"));
  EXPECT_EQ(m.layers, 24);
  EXPECT_EQ(m.state_bytes(), 16.0 * 24.0 * static_cast<double>(m.params_per_layer));
}

TEST(Model, RejectsNonPositiveBatch) {
  ModelSpec m;
  m.global_batch = 0;
  EXPECT_THROW(validate_model(m), ValidationError);
}

TEST(Profile, RejectsGapsAndNonIncreasingMemory) {
  Json doc = read_json_file(fixture("bertlarge_clusterA.json"))[0];
  Json gap = doc;
  gap["fwd_ms"].erase(3);
  EXPECT_THROW(validate_profile(profile_from_json(gap)), ValidationError);
  Json flat = doc;
  flat["compute_mem_gib"][1][1] = flat["compute_mem_gib"][0][1];
  EXPECT_THROW(validate_profile(profile_from_json(flat)), ValidationError);
}

class PlanValidation : public ::testing::Test {
 protected:
  void SetUp() override {
    perf = testing::fit_all("bertlarge_clusterA.json");
    cluster = load_cluster(fixture("cluster_a.json"));
    model = load_model(fixture("models/bert_large.json"));
    model.global_batch = 64;
    OptimizerOptions opt;
    opt.allow_idle = true;
    plan = dp_optimize(cluster, model, perf, opt).plan;
  }
  PerfModelSet perf;
  ClusterSpec cluster;
  ModelSpec model;
  TrainPlan plan;
};

TEST_F(PlanValidation, OptimizerPlanIsClean) {
  EXPECT_TRUE(validate_plan(plan, cluster, model, perf).empty());
}

TEST_F(PlanValidation, BatchSumMismatchIsConstraintOne) {
  TrainPlan bad = plan;
  for (auto& a : bad.assignments) {
    if (!a.idle()) {
      a.num_microbatches += 1;
      a.batch = a.microbatch * a.num_microbatches;
      break;
    }
  }
  const auto vs = validate_plan(bad, cluster, model, perf);
  EXPECT_TRUE(has(vs, Constraint::kBatchSum));
}

TEST_F(PlanValidation, LargeMicrobatchOnSmallGpuIsConstraintTwo) {
  TrainPlan bad = plan;
  auto& p100 = bad.assignments[6];
  ASSERT_EQ(p100.gpu_id, "p100-0");
  p100.microbatch = 16;
  p100.num_microbatches = 1;
  p100.batch = 16;
  const auto vs = validate_plan(bad, cluster, model, perf);
  EXPECT_TRUE(has(vs, Constraint::kComputeMemory));
}

TEST_F(PlanValidation, RatioSumIsChecked) {
  TrainPlan bad = plan;
  bad.assignments[0].state_ratio += 0.01;
  bad.assignments[0].predicted_state_mem = bad.assignments[0].state_ratio * model.state_bytes();
  EXPECT_TRUE(has(validate_plan(bad, cluster, model, perf), Constraint::kStateRatioSum));
}

TEST_F(PlanValidation, MissingGpuIsStructural) {
  TrainPlan bad = plan;
  bad.assignments.pop_back();
  EXPECT_TRUE(has(validate_plan(bad, cluster, model, perf), Constraint::kStructure));
}

TEST_F(PlanValidation, JsonRoundTripIsExact) {
  TrainPlan with_shards = plan;
  std::vector<double> ratios;
  for (const auto& a : plan.assignments) ratios.push_back(a.state_ratio);
  with_shards.unit_shards = assign_unit_shards(ratios, model);
  const TrainPlan back = plan_from_json(Json::parse(plan_to_json(with_shards).dump()));
  EXPECT_EQ(back, with_shards);
}

TEST(PerfJson, RoundTripIsExact) {
  const PerfModelSet perf = testing::fit_all("bertlarge_clusterA.json");
  EXPECT_EQ(perf_from_json(Json::parse(perf_to_json(perf).dump())), perf);
}

}  // namespace
}  // namespace hetplan
