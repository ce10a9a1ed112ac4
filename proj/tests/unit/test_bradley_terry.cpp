#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "diffcal/bradley_terry.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;
using namespace diffcal::bt;

namespace {

// Expected win masses for the given strengths, `m` comparisons per pair.
WinMatrix expected_wins(const std::vector<double>& l, double m) {
  WinMatrix w(l.size());
  for (std::size_t i = 0; i < l.size(); ++i)
    for (std::size_t j = 0; j < l.size(); ++j)
      if (i != j) w.set(i, j, m / (1 + std::exp(l[j] - l[i])));
  return w;
}

WinMatrix random_matrix(Rng& rng, std::size_t n) {
  WinMatrix w(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) w.set(i, j, 0.1 + 3 * rng.uniform01());
  return w;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(BradleyTerry, TwoItemClosedForm) {
  WinMatrix w(2);
  w.set(0, 1, 3);
  w.set(1, 0, 1);
  const auto r = bt_fit(w);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.lambda[0] - r.lambda[1], std::log(3.0), 1e-9);
  EXPECT_NEAR(r.lambda[0] + r.lambda[1], 0, 1e-12);
}

TEST(BradleyTerry, RecoversGeneratingStrengths) {
  Rng rng(5);
  std::vector<double> l(12);
  for (auto& x : l) x = rng.normal();
  const double mean = sum(l) / l.size();
  for (auto& x : l) x -= mean;
  const auto r = bt_fit(expected_wins(l, 4));
  ASSERT_TRUE(r.converged);
  for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(r.lambda[i], l[i], 1e-6);
}

TEST(BradleyTerry, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const double h = 1e-6;
  for (int rep = 0; rep < 100; ++rep) {
    const auto w = random_matrix(rng, 5);
    std::vector<double> l(5);
    for (auto& x : l) x = rng.normal();
    const auto g = bt_loglik_grad(w, l);
    for (std::size_t k = 0; k < 5; ++k) {
      auto up = l, dn = l;
      up[k] += h;
      dn[k] -= h;
      const double fd = (bt_loglik(w, up) - bt_loglik(w, dn)) / (2 * h);
      EXPECT_NEAR(g[k], fd, 1e-4 * std::max(1.0, std::abs(fd))) << rep << "/" << k;
    }
  }
}

TEST(BradleyTerry, GradientVanishesAtTheFit) {
  Rng rng(2);
  const auto w = random_matrix(rng, 8);
  const auto r = bt_fit(w);
  for (double g : bt_loglik_grad(w, r.lambda)) EXPECT_NEAR(g, 0, 1e-6);
}

TEST(BradleyTerry, TransposeNegatesAndScalingIsInvariant) {
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto w = random_matrix(rng, 6);
    const auto base = bt_fit(w);
    const auto t = bt_fit(w.transposed());
    const auto s = bt_fit(w.scaled(7.5));
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(t.lambda[i], -base.lambda[i], 1e-8);
      EXPECT_NEAR(s.lambda[i], base.lambda[i], 1e-8);
    }
  }
}

TEST(BradleyTerry, MMIncreasesTheLikelihood) {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const auto r = bt_fit(random_matrix(rng, 10));
    ASSERT_GE(r.loglik_trace.size(), 2u);
    for (std::size_t k = 1; k < r.loglik_trace.size(); ++k)
      EXPECT_GE(r.loglik_trace[k], r.loglik_trace[k - 1] - 1e-9);
    EXPECT_NEAR(sum(r.lambda), 0, 1e-10);
    EXPECT_DOUBLE_EQ(r.loglik, r.loglik_trace.back());
  }
}

TEST(BradleyTerry, SymmetricWinsGiveEqualStrengths) {
  WinMatrix w(5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (i != j) w.set(i, j, 2);
  for (double x : bt_fit(w).lambda) EXPECT_NEAR(x, 0, 1e-12);
}

TEST(BradleyTerry, DisconnectedGraph) {
  WinMatrix w(4);
  w.set(0, 1, 1);
  w.set(1, 0, 1);
  w.set(2, 3, 2);
  w.set(3, 2, 1);
  try {
    bt_fit(w);
    FAIL();
  } catch (const DisconnectedGraphError& e) {
    EXPECT_EQ(e.components().size(), 2u);
  }
}

TEST(BradleyTerry, SeparationAndSmoothing) {
  // 0 beats 1 beats 2, nobody ever beats 0.
  WinMatrix w(3);
  w.set(0, 1, 1);
  w.set(1, 2, 1);
  w.set(2, 1, 1);
  w.set(0, 2, 1);
  try {
    bt_fit(w);
    FAIL();
  } catch (const SeparationError& e) {
    EXPECT_EQ(e.group(), (std::vector<std::size_t>{0}));
  }
  BTConfig cfg;
  cfg.smoothing = 0.5;
  const auto r = bt_fit(w, cfg);
  ASSERT_TRUE(r.converged);
  EXPECT_GT(r.lambda[0], r.lambda[1]);
  EXPECT_NEAR(r.lambda[1], r.lambda[2], 1e-8);
}

TEST(BradleyTerry, PerfectOrderNeedsSmoothing) {
  WinMatrix w(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) w.set(i, j, 1);
  EXPECT_THROW(bt_fit(w), SeparationError);
  BTConfig cfg;
  cfg.smoothing = 0.5;
  const auto r = bt_fit(w, cfg);
  EXPECT_EQ(ranking(r), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Pseudocounts, Examples) {
  EXPECT_EQ(soft_to_pseudocounts(0.25), (std::pair<std::int64_t, std::int64_t>{250000, 750000}));
  EXPECT_EQ(soft_to_pseudocounts(1.0), (std::pair<std::int64_t, std::int64_t>{1000000, 0}));
  EXPECT_EQ(soft_to_pseudocounts(0.0), (std::pair<std::int64_t, std::int64_t>{0, 1000000}));
  EXPECT_EQ(soft_to_pseudocounts(0.3333334).first, 333333);
  EXPECT_EQ(soft_to_pseudocounts(0.5).first, 500000);
  EXPECT_THROW(soft_to_pseudocounts(1.5), std::exception);
  EXPECT_THROW(soft_to_pseudocounts(std::nan("")), std::exception);
}

TEST(Pseudocounts, ConserveTheTotal) {
  Rng rng(8);
  for (int k = 0; k < 10000; ++k) {
    const double p = rng.uniform01();
    const auto [a, b] = soft_to_pseudocounts(p);
    ASSERT_EQ(a + b, 1000000);
    ASSERT_LE(std::abs(a - p * 1e6), 0.5 + 1e-6);
  }
}

TEST(Ranking, AverageRanksWithHardestFirst) {
  const std::vector<double> l{0.3, -1.0, 2.0, 0.3};
  EXPECT_EQ(ranking(l), (std::vector<double>{2.5, 4, 1, 2.5}));
}
