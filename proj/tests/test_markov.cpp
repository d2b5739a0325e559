#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "specalloc/markov.hpp"
#include "specalloc/maxp.hpp"

using namespace specalloc;

namespace {

std::vector<double> random_matrix(std::size_t n, std::mt19937_64& rng, double zero_frac) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      m[i * n + j] = u(rng) < zero_frac ? 0.0 : u(rng);
      s += m[i * n + j];
    }
    if (s == 0.0) {
      m[i * n + i] = 1.0;
      s = 1.0;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) acc += (m[i * n + j] /= s);
    m[i * n + n - 1] = std::max(0.0, 1.0 - acc);
  }
  return m;
}

const std::vector<double> kSym2{0.5, 0.5, 0.5, 0.5};

}  // namespace

TEST(MarkovChain, DenseValidation) {
  EXPECT_THROW(MarkovChain::dense(2, {0.5, 0.5, 0.4, 0.5}), std::invalid_argument);
  EXPECT_THROW(MarkovChain::dense(2, {1.5, -0.5, 0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(MarkovChain::dense(2, {1.0, 0.0, 1.0}), std::invalid_argument);
  EXPECT_NO_THROW(MarkovChain::dense(2, kSym2));
}

TEST(MarkovChain, RingRows) {
  const auto c = build_toy_chain(Topology::ring1d, 8000, 0.99);
  EXPECT_DOUBLE_EQ(c.transition(0, 0), 0.99);
  EXPECT_NEAR(c.transition(0, 1), 0.005, 1e-15);
  EXPECT_NEAR(c.transition(0, 7999), 0.005, 1e-15);
  EXPECT_EQ(c.transition(0, 2), 0.0);
  EXPECT_NEAR(expected_escape_segments(c, 17), 100.0, 1e-9);
}

TEST(MarkovChain, CompleteRows) {
  const auto c = build_toy_chain(Topology::complete, 3, 0.99);
  EXPECT_NEAR(c.transition(0, 1), 0.005, 1e-15);
  EXPECT_NEAR(c.transition(2, 0), 0.005, 1e-15);
  double s = 0.0;
  for (std::size_t j = 0; j < 3; ++j) s += c.transition(1, j);
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(MarkovChain, LatticeNeighboursArePeriodic) {
  EXPECT_THROW(build_toy_chain(Topology::lattice3d, 1000 + 1, 0.99), std::invalid_argument);
  EXPECT_THROW(build_toy_chain(Topology::ring1d, 2, 0.99), std::invalid_argument);
  const auto c = build_toy_chain(Topology::lattice3d, 8000, 0.99);
  auto nb = c.neighbors(0);
  std::sort(nb.begin(), nb.end());
  // (x,y,z) = (0,0,0): x+-1, y+-1, z+-1 with side 20
  std::vector<std::size_t> want{1, 19, 20, 380, 400, 7600};
  EXPECT_EQ(nb, want);
  for (std::size_t j : want) EXPECT_NEAR(c.transition(0, j), 0.01 / 6, 1e-15);
  // every state has 6 distinct neighbours that point back
  for (std::size_t i = 0; i < 8000; i += 37)
    for (std::size_t j : c.neighbors(i)) {
      const auto back = c.neighbors(j);
      EXPECT_NE(std::find(back.begin(), back.end(), i), back.end());
    }
}

TEST(MarkovChain, ToyRowsMatchDenseForm) {
  for (auto topo : {Topology::ring1d, Topology::complete}) {
    const auto c = build_toy_chain(topo, 7, 0.6);
    const auto m = c.dense_matrix();
    EXPECT_NO_THROW(MarkovChain::dense(7, m));
  }
  const auto lat = build_toy_chain(Topology::lattice3d, 8, 0.3);  // side 2: doubled neighbours
  const auto m = lat.dense_matrix();
  EXPECT_NO_THROW(MarkovChain::dense(8, m));
  EXPECT_NEAR(m[0 * 8 + 1], 2 * 0.7 / 6, 1e-15);
}

TEST(MarkovChain, SamplingMatchesRows) {
  std::mt19937_64 rng(5);
  const auto c = MarkovChain::dense(3, {0.2, 0.5, 0.3, 0.0, 0.0, 1.0, 0.6, 0.0, 0.4});
  const int n = 200000;
  std::vector<int> hit(3, 0), jump(3, 0);
  for (int k = 0; k < n; ++k) {
    ++hit[c.step(0, rng)];
    ++jump[c.jump(0, rng)];
  }
  const double probs[3] = {0.2, 0.5, 0.3};
  for (int j = 0; j < 3; ++j) {
    const double sd = std::sqrt(n * probs[j] * (1 - probs[j]));
    EXPECT_NEAR(hit[j], n * probs[j], 3 * sd);
  }
  EXPECT_EQ(jump[0], 0);
  EXPECT_NEAR(jump[1], n * 0.5 / 0.8, 3 * std::sqrt(n * 0.625 * 0.375));
  for (int k = 0; k < 100; ++k) EXPECT_EQ(c.step(1, rng), 2u);
}

TEST(MarkovChain, VirtualEndpointsFollowSelfLoop) {
  std::mt19937_64 rng(8);
  const auto c = build_toy_chain(Topology::ring1d, 100, 0.99);
  std::vector<std::size_t> starts(100000, 42);
  const auto ends = sample_virtual_endpoints(c, starts, rng);
  const double stay = static_cast<double>(std::count(ends.begin(), ends.end(), 42u));
  EXPECT_NEAR(stay / starts.size(), 0.99, 3 * std::sqrt(0.99 * 0.01 / starts.size()));
  for (auto e : ends) EXPECT_TRUE(e == 41 || e == 42 || e == 43);

  const auto det = MarkovChain::dense(3, {0, 1, 0, 0, 0, 1, 1, 0, 0});
  EXPECT_EQ(sample_virtual_endpoints(det, {0, 1, 2}, rng), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(FirstPassage, SymmetricTwoState) {
  const auto c = MarkovChain::dense(2, kSym2);
  const auto f = first_passage(c, 0, 1, 10);
  for (std::size_t n = 1; n <= 10; ++n) EXPECT_NEAR(f[n - 1], std::pow(0.5, n), 1e-15);
  const auto r = first_return(c, 1, 10);
  for (std::size_t n = 1; n <= 10; ++n) EXPECT_NEAR(r.f[n - 1], std::pow(0.5, n), 1e-15);
  EXPECT_THROW(first_passage(c, 0, 0, 3), std::invalid_argument);
  EXPECT_THROW(first_passage(c, 0, 2, 3), std::out_of_range);
  EXPECT_THROW(first_return(c, 5, 3), std::out_of_range);
}

TEST(FirstPassage, AbsorbingTarget) {
  const auto c = MarkovChain::dense(2, {0.0, 1.0, 0.0, 1.0});
  const auto f = first_passage(c, 0, 1, 5);
  EXPECT_EQ(f[0], 1.0);
  for (std::size_t n = 2; n <= 5; ++n) EXPECT_EQ(f[n - 1], 0.0);
}

TEST(FirstReturn, IdentityChain) {
  const auto c = MarkovChain::dense(2, {1.0, 0.0, 0.0, 1.0});
  const auto r = first_return(c, 0, 6);
  EXPECT_EQ(r.f[0], 1.0);
  for (std::size_t n = 2; n <= 6; ++n) EXPECT_EQ(r.f[n - 1], 0.0);
  EXPECT_EQ(r.up_to(6), 1.0);
  EXPECT_EQ(visit_count_prob(c, 0, 1, 1, 5), 0.0);
  EXPECT_EQ(visit_count_prob(c, 0, 1, 3, 5), 0.0);
}

TEST(FirstReturn, CompleteThreeStateMatchesEnumeration) {
  const auto c = build_toy_chain(Topology::complete, 3, 0.99);
  const auto m = c.dense_matrix();
  const auto r = first_return(c, 0, 8);
  const auto want = oracle::first_hit(m, 3, 0, 0, 8);
  for (std::size_t n = 0; n < 8; ++n) EXPECT_NEAR(r.f[n], want[n], 1e-12);
}

TEST(VisitCounts, SymmetricTwoStateByHand) {
  const auto c = MarkovChain::dense(2, kSym2);
  EXPECT_NEAR(visit_count_prob(c, 0, 1, 1, 2), 0.5, 1e-15);
  EXPECT_NEAR(visit_count_prob(c, 0, 1, 2, 2), 0.25, 1e-15);
  EXPECT_NEAR(visit_count_prob(c, 0, 1, 0, 2), 0.25, 1e-15);
  EXPECT_NEAR(exceed_prob(c, 0, 1, 0, 2), 0.75, 1e-15);
  EXPECT_NEAR(exceed_prob(c, 0, 1, 1, 2), 0.25, 1e-15);
}

TEST(VisitCounts, MonotoneInThresholdAndHorizon) {
  const auto c = build_toy_chain(Topology::ring1d, 5, 0.7);
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t h = 1; h < 15; ++h)
      for (std::size_t s = 0; s < h; ++s) {
        const double e = exceed_prob(c, 0, j, s, h);
        EXPECT_LE(exceed_prob(c, 0, j, s + 1, h), e + 1e-15);
        EXPECT_GE(exceed_prob(c, 0, j, s, h + 1), e - 1e-15);
      }
  }
  // recurrence: a long horizon almost surely reaches every state
  EXPECT_NEAR(exceed_prob(c, 0, 3, 0, 2000), 1.0, 1e-12);
}

// Every analytic recursion against path enumeration on random small chains.
TEST(VisitCounts, RandomChainsMatchPathEnumeration) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 3;
    const auto m = random_matrix(n, rng, seed % 2 ? 0.3 : 0.0);
    const auto c = MarkovChain::dense(n, m);
    const std::size_t h = 8;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const auto hit = oracle::first_hit(m, n, i, j, h);
        if (i == j) {
          const auto r = first_return(c, i, h);
          double acc = 0.0;
          for (std::size_t k = 0; k < h; ++k) {
            acc += hit[k];
            ASSERT_NEAR(r.f[k], hit[k], 1e-12);
            ASSERT_NEAR(r.cumulative[k], acc, 1e-12);
          }
        } else {
          const auto f = first_passage(c, i, j, h);
          for (std::size_t k = 0; k < h; ++k) ASSERT_NEAR(f[k], hit[k], 1e-12);
        }
        for (std::size_t len = 1; len <= h; ++len) {
          const auto want = oracle::visit_distribution(m, n, i, j, len);
          VisitCounter vc(c, i, j, len);
          double total = 0.0, tail = 1.0;
          for (std::size_t v = 0; v <= len; ++v) {
            const double got = vc.exactly(v);
            ASSERT_NEAR(got, want[v], 1e-12) << "seed " << seed << " len " << len << " v " << v;
            total += got;
            tail -= want[v];
            ASSERT_NEAR(vc.exceeds(v), std::max(0.0, tail), 1e-12);
          }
          ASSERT_NEAR(total, 1.0, 1e-12);
        }
      }
  }
}
