#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "specalloc/allocator.hpp"
#include "specalloc/cost_model.hpp"
#include "specalloc/taskdist.hpp"

using namespace specalloc;

namespace {

const CostModel& model() {
  static const CostModel m = default_cost_model();
  return m;
}

TaskProbabilityDistribution dist_of(std::vector<double> p) {
  return TaskProbabilityDistribution::from_unsorted(std::move(p));
}

// Best throughput over shares on a 0.25 grid, each share 0 or in [w_lo, w_max],
// with total at most `budget`.
double grid_optimum(const std::vector<double>& p, double budget, const CostModel& m) {
  std::vector<double> levels{0.0};
  for (double w = 0.25; w <= std::min(budget, m.w_max()) + 1e-12; w += 0.25)
    if (w >= m.w_lo()) levels.push_back(w);
  double best = 0.0;
  std::function<void(std::size_t, double, double)> rec = [&](std::size_t i, double used, double r) {
    if (i == p.size()) {
      best = std::max(best, r);
      return;
    }
    for (double w : levels) {
      if (used + w > budget + 1e-12) break;
      rec(i + 1, used + w, r + (w > 0 ? p[i] / oracle::time(oracle::kDefault, w) : 0.0));
    }
  };
  rec(0, 0.0, 0.0);
  return best;
}

void expect_invariants(const TaskProbabilityDistribution& d, double budget,
                       const Allocation& a, const CostModel& m) {
  ASSERT_EQ(a.w.size(), d.size());
  std::size_t funded = 0;
  for (std::size_t i = 0; i < a.w.size(); ++i) {
    const double w = a.w[i];
    if (w > 0) {
      ++funded;
      EXPECT_GE(w, m.w_lo() * (1 - 1e-12));
      EXPECT_LE(w, m.w_max() * (1 + 1e-12));
    }
    if (i > 0) {
      EXPECT_LE(w, a.w[i - 1] * (1 + 1e-9) + 1e-12) << "shares not monotone at " << i;
    }
  }
  EXPECT_EQ(funded, a.m_star);
  const double target = std::min(budget, static_cast<double>(a.m_star) * m.w_max());
  EXPECT_NEAR(a.total(), target, 1e-6 * target);
  // stationarity among interior shares
  const double mu = -a.lambda;
  for (std::size_t i = 0; i < a.m_star; ++i) {
    const double w = a.w[i];
    if (w > m.w_lo() * (1 + 1e-9) && w < m.w_max() * (1 - 1e-9)) {
      EXPECT_NEAR(d[i] * m.efficiency(w), mu, 1e-6 * std::fabs(mu)) << "task " << i;
    }
  }
  EXPECT_NEAR(a.expected_throughput, expected_throughput(d, a.w, m), 1e-12 * a.expected_throughput);
}

}  // namespace

TEST(Distribution, ValidatesOrderAndSign) {
  EXPECT_THROW(TaskProbabilityDistribution({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(TaskProbabilityDistribution({0.5, 0.0}), std::invalid_argument);
  EXPECT_THROW(TaskProbabilityDistribution({NAN}), std::invalid_argument);
  const auto d = dist_of({0.2, 1.0, 0.2, 0.5});
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[3], 0.2);
  EXPECT_EQ(d.runs().size(), 3u);
  EXPECT_DOUBLE_EQ(d.prefix_sum(2), 1.5);
}

TEST(ExpectedThroughput, Examples) {
  const auto& m = model();
  EXPECT_NEAR(expected_throughput(dist_of({1.0}), std::vector<double>{m.w_max()}, m),
              1.0 / 19.4635, 1e-4);
  EXPECT_EQ(expected_throughput(dist_of({1.0}), std::vector<double>{}, m), 0.0);
  EXPECT_NEAR(expected_throughput(dist_of({1.0, 1.0}), std::vector<double>{1.0, 1.0}, m),
              2.0 / oracle::time(oracle::kDefault, 1.0), 1e-15);
  EXPECT_THROW(expected_throughput(dist_of({1.0}), std::vector<double>{-1.0}, m),
               std::invalid_argument);
  EXPECT_THROW(expected_throughput(dist_of({1.0}), std::vector<double>{1.0, 1.0}, m),
               std::invalid_argument);
}

TEST(SolveLambda, EqualProbabilitiesGiveUniformShares) {
  const auto d = dist_of(std::vector<double>(8, 0.3));
  const auto s = solve_lambda(d, 8, 40.0, model());
  for (double w : s.shares) EXPECT_NEAR(w, 5.0, 1e-9);
}

TEST(SolveLambda, SingleTask) {
  const auto d = dist_of({0.7, 0.2});
  EXPECT_NEAR(solve_lambda(d, 1, 20.0, model()).shares[0], 20.0, 1e-9);
  EXPECT_NEAR(solve_lambda(d, 1, 5000.0, model()).shares[0], model().w_max(), 1e-12);
}

TEST(SolveLambda, TwoTaskStationarity) {
  const auto& m = model();
  const auto s = solve_lambda(dist_of({1.0, 0.5}), 2, 20.0, m);
  ASSERT_EQ(s.shares.size(), 2u);
  EXPECT_NEAR(s.shares[0] + s.shares[1], 20.0, 1e-9);
  EXPECT_NEAR(1.0 * m.efficiency(s.shares[0]), 0.5 * m.efficiency(s.shares[1]),
              1e-9 * m.efficiency(s.shares[0]));
  EXPECT_NEAR(1.0 * m.efficiency(s.shares[0]), -s.lambda, 1e-9 * -s.lambda);
  EXPECT_GT(s.shares[0], s.shares[1]);
}

TEST(SolveLambda, RejectsBadCounts) {
  const auto d = dist_of({0.7, 0.2});
  EXPECT_THROW(solve_lambda(d, 0, 20.0, model()), std::invalid_argument);
  EXPECT_THROW(solve_lambda(d, 3, 20.0, model()), std::invalid_argument);
  EXPECT_THROW(solve_lambda(d, 2, -1.0, model()), std::invalid_argument);
  // two tasks cannot both get w_lo out of half a slot
  EXPECT_THROW(solve_lambda(d, 2, 0.6, model()), std::exception);
}

// With M tasks all at p = 1 the best the optimizer can do is max_k k / T(N/k).
double equal_p_oracle(std::size_t tasks, double budget) {
  double best = 0.0;
  for (std::size_t k = 1; k <= tasks; ++k) {
    const double w = std::min(budget / static_cast<double>(k), 207.53811257227525);
    if (w < 0.5) break;
    best = std::max(best, k / oracle::time(oracle::kDefault, w));
  }
  return best;
}

TEST(OptimalAllocation, AllOnesMatchesEnumeration) {
  const auto d = dist_of(std::vector<double>(1000, 1.0));
  for (double n : {10.0, 100.0, 1000.0, 1e4, 1e5}) {
    const auto opt = optimal_allocation(d, n, model());
    EXPECT_NEAR(opt.expected_throughput, equal_p_oracle(1000, n), 1e-10 * opt.expected_throughput);
  }
  // w T(w) is smallest slightly above one slot, so with exactly one slot per
  // task it pays to drop a task: 999 tasks at w = 1000/999
  const auto a = optimal_allocation(d, 1000.0, model());
  EXPECT_EQ(a.m_star, 999u);
  EXPECT_NEAR(boost(d, 1000.0, model()) - 1.0, 1.2112e-8, 1e-11);
}

TEST(OptimalAllocation, AllOnesMatchesNaive) {
  const auto d = dist_of(std::vector<double>(1000, 1.0));
  for (double n : {10.0, 100.0, 1e4, 1e5}) {
    const auto opt = optimal_allocation(d, n, model());
    const auto nai = naive_allocation(d, n, model());
    EXPECT_NEAR(opt.expected_throughput / nai.expected_throughput, 1.0, 1e-9) << "N=" << n;
    EXPECT_NEAR(boost(d, n, model()), 1.0, 1e-9);
  }
}

TEST(OptimalAllocation, SingleCertainTaskGetsMinimumTime) {
  std::vector<double> p{1.0};
  p.insert(p.end(), 50, 1e-9);
  const auto a = optimal_allocation(dist_of(p), 300.0, model());
  // the 1e-9 tasks pull it off the flat minimum only negligibly
  EXPECT_NEAR(a.w[0], model().w_max(), 1e-6 * model().w_max());
}

TEST(OptimalAllocation, GridOracleOnSmallInstances) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_int_distribution<int> count(1, 4);
  std::uniform_int_distribution<int> budget_q(2, 24);  // quarter slots
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> p(count(rng));
    for (auto& x : p) x = u(rng);
    std::sort(p.rbegin(), p.rend());
    const double budget = budget_q(rng) * 0.25;
    const auto a = optimal_allocation(dist_of(p), budget, model());
    const double grid = grid_optimum(p, budget, model());
    EXPECT_GE(a.expected_throughput, grid * (1 - 1e-9)) << "trial " << trial;
  }
}

TEST(OptimalAllocation, RandomizedInvariantsAndDominance) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 400);
  std::uniform_real_distribution<double> logp(-8.0, 0.0);
  std::uniform_real_distribution<double> logn(-0.2, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> p(size(rng));
    for (auto& x : p) x = std::pow(10.0, logp(rng));
    const auto d = dist_of(p);
    const double n = std::pow(10.0, logn(rng));
    const auto a = optimal_allocation(d, n, model());
    expect_invariants(d, n, a, model());
    const auto nai = naive_allocation(d, n, model());
    const auto con = best_constant_allocation(d, n, model());
    EXPECT_GE(a.expected_throughput, nai.expected_throughput * (1 - 1e-9));
    EXPECT_GE(a.expected_throughput, con.throughput * (1 - 1e-9));
  }
}

TEST(OptimalAllocation, BoundedScanMatchesExhaustive) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 3000);
  std::uniform_real_distribution<double> logp(-6.0, 0.0);
  std::uniform_real_distribution<double> logn(0.0, 5.0);
  AllocatorOptions bounded;
  bounded.scan = ScanStrategy::bounded;
  for (int trial = 0; trial < 80; ++trial) {
    std::vector<double> p(size(rng));
    for (auto& x : p) x = std::pow(10.0, logp(rng));
    // repeated values exercise the run bookkeeping
    for (std::size_t i = 0; i + 1 < p.size(); i += 3) p[i + 1] = p[i];
    const auto d = dist_of(p);
    const double n = std::pow(10.0, logn(rng));
    const auto ex = optimal_allocation(d, n, model());
    const auto bd = optimal_allocation(d, n, model(), bounded);
    EXPECT_NEAR(bd.expected_throughput, ex.expected_throughput, 1e-9 * ex.expected_throughput)
        << "trial " << trial;
    expect_invariants(d, n, bd, model());
  }
}

TEST(NaiveAllocation, Examples) {
  const auto d = dist_of(std::vector<double>(100, 0.5));
  const auto a = naive_allocation(d, 50.0, model());
  EXPECT_EQ(a.m_star, 50u);
  EXPECT_EQ(a.w[0], 1.0);
  EXPECT_EQ(a.w[50], 0.0);
  const auto b = naive_allocation(d, 1000.0, model());
  EXPECT_EQ(b.m_star, 100u);
  for (double w : b.w) EXPECT_DOUBLE_EQ(w, 10.0);
  // shares never exceed the minimum-time allocation
  const auto c = naive_allocation(d, 1e6, model());
  EXPECT_DOUBLE_EQ(c.w[0], model().w_max());
}

TEST(BestConstant, EqualProbabilitiesPickNaiveShare) {
  const auto d = dist_of(std::vector<double>(100, 0.5));
  const auto c = best_constant_allocation(d, 1000.0, model());
  EXPECT_NEAR(c.w_best, 10.0, 1e-12);
  EXPECT_EQ(c.tasks, 100u);
}

TEST(BestConstant, MatchesFineGridSearch) {
  // fine search over w with the top floor(N/w) tasks funded
  const auto d = sample_distribution(DistributionSpec::beta_shape(0.5, 1.0, 3));
  for (double n : {30.0, 700.0, 20000.0}) {
    const auto c = best_constant_allocation(d, n, model());
    double grid = 0.0;
    for (double w = model().w_lo(); w <= model().w_max(); w *= 1.0005) {
      const auto k = std::min<std::size_t>(d.size(), static_cast<std::size_t>(std::floor(n / w)));
      if (k) grid = std::max(grid, d.prefix_sum(k) / model().time(w));
    }
    EXPECT_GE(c.throughput, grid * (1 - 1e-12)) << "N=" << n;
    EXPECT_LE(c.throughput, grid * (1 + 2e-3)) << "N=" << n;
  }
}

TEST(Boost, BoundedBySpeedup) {
  const auto d = sample_distribution(DistributionSpec::delta(1e-10, 5));
  const double cap = model().t_serial() / model().t_min();
  for (double n : {100.0, 1e4, 1e5}) {
    const double b = boost(d, n, model());
    EXPECT_GE(b, 1.0 - 1e-9);
    EXPECT_LE(b, cap * (1 + 1e-9));
  }
}

TEST(Integerize, KeepsTotalsAndFloors) {
  Allocation a;
  a.w = {3.6, 2.2, 1.2, 0.0};
  a.m_star = 3;
  const auto v = integerize(a);
  EXPECT_EQ(v[0] + v[1] + v[2] + v[3], 7);
  EXPECT_EQ(v[3], 0);
  EXPECT_EQ(v[0], 4);
  EXPECT_GE(v[2], 1);
}
