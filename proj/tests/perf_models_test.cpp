// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "hetplan/errors.hpp"
#include "hetplan/json_io.hpp"
#include "hetplan/optimizer.hpp"
#include "test_support.hpp"

namespace hetplan {
namespace {

using testing::fixture;

ProfileDocument a6000() {
  for (auto& doc : load_profiles(fixture("bertlarge_clusterA.json"))) {
    if (doc.key() == "bertlarge_a6000") return doc;
  }
  throw std::runtime_error("fixture missing A6000");
}

TEST(LatencyFit, TableRegimeIsExact) {
  const ProfileDocument doc = a6000();
  const GpuPerfModel m = fit_profile(doc);
  ASSERT_EQ(m.fwd.max_profiled(), 16);
  for (const auto& p : doc.compute.fwd) EXPECT_EQ(m.fwd.eval(p.microbatch), p.value);
  EXPECT_EQ(m.fwd.eval(8), 19.654733333333336);
}

TEST(LatencyFit, ExtrapolationMatchesRawSumsOracle) {
  const ProfileDocument doc = a6000();
  const GpuPerfModel m = fit_profile(doc);
  std::vector<std::pair<double, double>> tail;
  for (const auto& p : doc.compute.fwd) {
    if (p.microbatch >= 8) tail.emplace_back(static_cast<double>(p.microbatch), p.value);
  }
  const auto [slope, intercept] = testing::raw_sums_fit(tail);
  EXPECT_NEAR(m.fwd.slope(), slope, 1e-9 * slope);
  EXPECT_NEAR(m.fwd.intercept(), intercept, 1e-9 * std::abs(slope));
  const double ratio = m.fwd.eval(32) / m.fwd.eval(16);
  EXPECT_GE(ratio, 1.9);
  EXPECT_LE(ratio, 2.1);
}

TEST(LatencyFit, CustomRegimeStart) {
  const GpuPerfModel m = fit_profile(a6000(), 15);
  const double two_point = 39.725666666666626 - 37.257933333333334;
  EXPECT_NEAR(m.fwd.slope(), two_point, 1e-12);
}

TEST(LatencyFit, OnePointIsInsufficient) {
  ProfileDocument doc = a6000();
  doc.compute.fwd.resize(1);
  doc.compute.bwd.resize(1);
  EXPECT_THROW(fit_profile(doc), InsufficientPointsError);
}

TEST(LatencyFit, EmptyProfileIsRejected) {
  ProfileDocument doc = a6000();
  doc.compute.fwd.clear();
  EXPECT_THROW(fit_profile(doc), ValidationError);
}

TEST(MemoryFit, SlopeNearTwoPointSlope) {
  const ProfileDocument doc = a6000();
  const MemoryModel mem = fit_memory(doc.memory);
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : doc.memory.points) pts.emplace_back(static_cast<double>(p.microbatch), p.value);
  const auto [slope, intercept] = testing::raw_sums_fit(pts);
  EXPECT_NEAR(mem.slope, slope, 1e-9 * slope);
  EXPECT_NEAR(mem.intercept, intercept, 1e-9 * intercept);
  const double two_point = (18.16 - 10.23) / 15.0 * kBytesPerGiB;
  EXPECT_LE(std::abs(mem.slope - two_point) / two_point, 0.02);
  EXPECT_NEAR(bytes_to_gib(mem.slope), 0.5287, 1e-3);
  EXPECT_NEAR(bytes_to_gib(mem.intercept), 9.70, 0.02);
}

TEST(Latency, GradientAccumulationTradeoff) {
  const GpuPerfModel m = fit_profile(a6000());
  EXPECT_NEAR(total_latency(m.fwd, 1, 8), 8 * 2.6684666666666677, 1e-12);
  EXPECT_LT(total_latency(m.fwd, 8, 1), total_latency(m.fwd, 2, 4));
}

TEST(Comm, UnevenAddsFifteenPercent) {
  CommProfile c{10.0, 20.0, 0.15};
  const auto even = collective_latency(c, false);
  const auto uneven = collective_latency(c, true);
  EXPECT_EQ(even.allgather, 10.0);
  EXPECT_DOUBLE_EQ(uneven.allgather, 11.5);
  EXPECT_DOUBLE_EQ(uneven.reducescatter, 23.0);
}

TEST(LayerLatency, CommunicationFloor) {
  const GpuPerfModel m = testing::affine_model(0, 1, 0, 2, 0, 1);
  CommProfile c{5.0, 3.0, 0.15};
  const LayerLatency t = per_gpu_layer_latency(m, 100, c, 1, 1, 1);
  EXPECT_EQ(t.t_fwd, 5.0);
  EXPECT_EQ(t.t_bwd, 8.0);
  EXPECT_FALSE(t.used_uneven_comm);
  const LayerLatency u = per_gpu_layer_latency(m, 100, c, 1, 1, 99.5);
  EXPECT_TRUE(u.used_uneven_comm);
  EXPECT_DOUBLE_EQ(u.t_fwd, 5.75);
}

TEST(LayerLatency, P100CannotHoldOneSample) {
  const PerfModelSet perf = testing::fit_all("bertlarge_clusterA.json");
  const ClusterSpec c = load_cluster(fixture("cluster_a.json"));
  const GpuPerfModel& p100 = perf.at("bertlarge_p100");
  EXPECT_GT(p100.memory.eval(1), c.effective_capacity(6));
  EXPECT_THROW(per_gpu_layer_latency(p100, c.effective_capacity(6), c.comm, 1, 1, 0), InfeasibleError);
}

TEST(SharedSlope, RejectsSpreadAboveFivePercent) {
  ClusterSpec c;
  c.gpus = {{"a", 1e12, "a"}, {"b", 1e12, "b"}};
  PerfModelSet perf;
  perf.models["a"] = testing::affine_model(0, 1, 0, 1, 0, 1.0);
  perf.models["b"] = testing::affine_model(0, 1, 0, 1, 0, 1.04);
  EXPECT_DOUBLE_EQ(shared_memory_slope(c, perf), 1.04);
  perf.models["b"].memory.slope = 1.06;
  EXPECT_THROW(shared_memory_slope(c, perf), ValidationError);
}

}  // namespace
}  // namespace hetplan
