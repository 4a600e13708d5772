// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "hetplan/errors.hpp"
#include "hetplan/gradcheck.hpp"
#include "hetplan/json_io.hpp"
#include "test_support.hpp"

namespace hetplan {
namespace {

TEST(Gradcheck, UnevenSplitExample) {
  const GradFixture f = grad_fixture_from_json(read_json_file(testing::fixture("grad_example.json")));
  EXPECT_EQ(f.global_batch(), 4);
  const GradVector g = weighted_combine(f);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], 4.0);
}

TEST(Gradcheck, UniformSplitIsMeanOfMeans) {
  GradFixture f;
  f.per_gpu = {{{1.0, 2.0}, {3.0, 4.0}}, {{5.0, 6.0}, {7.0, 8.0}}};
  const GradVector g = weighted_combine(f);
  EXPECT_DOUBLE_EQ(g[0], (2.0 + 6.0) / 2);
  EXPECT_DOUBLE_EQ(g[1], (3.0 + 7.0) / 2);
}

TEST(Gradcheck, RandomFixturesMatchGlobalMean) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const GradFixture f = random_grad_fixture(seed);
    EXPECT_LE(max_relative_error(weighted_combine(f), global_mean(f)), 1e-12) << "seed " << seed;
  }
}

TEST(Gradcheck, ScaleEquivariance) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    GradFixture f = random_grad_fixture(seed);
    const GradVector base = weighted_combine(f);
    for (auto& gpu : f.per_gpu) {
      for (auto& g : gpu) {
        for (auto& v : g) v *= 8.0;
      }
    }
    const GradVector scaled = weighted_combine(f);
    for (std::size_t k = 0; k < base.size(); ++k) EXPECT_EQ(scaled[k], 8.0 * base[k]);
  }
}

TEST(Gradcheck, RejectsDimensionMismatch) {
  GradFixture f;
  f.per_gpu = {{{1.0, 2.0}}, {{3.0}}};
  EXPECT_THROW(weighted_combine(f), ValidationError);
}

TEST(Gradcheck, RejectsEmptyGpu) {
  GradFixture f;
  f.per_gpu = {{{1.0}}, {}};
  EXPECT_THROW(weighted_combine(f), ValidationError);
}

}  // namespace
}  // namespace hetplan
