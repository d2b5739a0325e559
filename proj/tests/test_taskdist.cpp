#include <gtest/gtest.h>

#include <cmath>

#include "specalloc/taskdist.hpp"

using namespace specalloc;

TEST(TaskDist, DeltaAtOneGivesExactlyTargetCount) {
  auto spec = DistributionSpec::delta(1.0, 3);
  const auto d = sample_distribution(spec);
  EXPECT_EQ(d.size(), 1000u);
  for (double p : d.values()) EXPECT_EQ(p, 1.0);
}

TEST(TaskDist, MixtureCountAndFractions) {
  double mean_count = 0.0, high = 0.0, total = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto d = sample_distribution(DistributionSpec::delta(0.01, s));
    for (double p : d.values()) high += p == 1.0;
    total += static_cast<double>(d.size());
    mean_count += static_cast<double>(d.size()) / seeds;
  }
  EXPECT_NEAR(high, 0.1 * total, 3 * std::sqrt(total * 0.1 * 0.9));
  // 1000 / (0.1 + 0.9 * 0.01)
  EXPECT_NEAR(mean_count, 9174.0, 150.0);
}

TEST(TaskDist, SumOvershootIsBounded) {
  for (int s = 0; s < 5; ++s)
    for (auto spec : {DistributionSpec::delta(0.1, s), DistributionSpec::beta_shape(0.5, 1.0, s)}) {
      const auto d = sample_distribution(spec);
      EXPECT_GE(d.sum(), 1000.0);
      EXPECT_LE(d.sum(), 1001.0);
    }
}

TEST(TaskDist, SmallShapeBetaReachesTinyValues) {
  const auto d = sample_distribution(DistributionSpec::beta_shape(0.1, 1.0, 1));
  // E[p] = 1/11
  EXPECT_NEAR(static_cast<double>(d.size()), 11000.0, 700.0);
  EXPECT_LT(d[d.size() - 1], 1e-20);
  EXPECT_GT(d[d.size() - 1], 0.0);
}

TEST(TaskDist, BetaMeanMatchesShape) {
  const auto d = sample_distribution(DistributionSpec::beta_shape(2.0, 5.0, 9));
  const double mean = d.sum() / static_cast<double>(d.size());
  const double sd = std::sqrt(2.0 * 5.0 / (49.0 * 8.0) / static_cast<double>(d.size()));
  EXPECT_NEAR(mean, 2.0 / 7.0, 4 * sd);
}

TEST(TaskDist, SameSeedSameOutput) {
  const auto a = sample_distribution(DistributionSpec::beta_shape(0.1, 1.0, 42));
  const auto b = sample_distribution(DistributionSpec::beta_shape(0.1, 1.0, 42));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(TaskDist, RejectsDegenerateSpecs) {
  EXPECT_THROW(sample_distribution(DistributionSpec::delta(0.0)), std::invalid_argument);
  EXPECT_THROW(sample_distribution(DistributionSpec::delta(1.5)), std::invalid_argument);
  EXPECT_THROW(sample_distribution(DistributionSpec::beta_shape(0.0, 1.0)), std::invalid_argument);
  auto s = DistributionSpec::delta(0.5);
  s.target_sum = 0.0;
  EXPECT_THROW(sample_distribution(s), std::invalid_argument);
}
