#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "diffcal/data.hpp"
#include "diffcal/psychometrics.hpp"
#include "diffcal/rng.hpp"
#include "diffcal/stats.hpp"

using namespace diffcal;
using irt::Response;
using irt::WeightedResponseMatrix;

namespace {

const double kSqrtPi = std::sqrt(std::numbers::pi);

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normal_pdf(double x, double sd) {
  return std::exp(-0.5 * (x / sd) * (x / sd)) / (sd * std::sqrt(2 * std::numbers::pi));
}

// Composite trapezoid over [-50, 50].
template <class F>
double trapezoid(F f, int points) {
  const double lo = -50, hi = 50, h = (hi - lo) / (points - 1);
  double s = 0.5 * (f(lo) + f(hi));
  for (int k = 1; k < points - 1; ++k) s += f(lo + k * h);
  return s * h;
}

double oracle_expected_p(double b, double sigma, int points) {
  return trapezoid([&](double t) { return logistic(t - b) * normal_pdf(t, sigma); }, points);
}

double oracle_loglik(const WeightedResponseMatrix& m, const std::vector<double>& b, double sigma) {
  double ll = 0;
  for (std::size_t p = 0; p < m.num_persons(); ++p) {
    const double lik = trapezoid(
        [&](double t) {
          double v = normal_pdf(t, sigma);
          for (const auto& r : m.responses[p]) {
            const double q = logistic(t - b[r.item]);
            v *= r.correct ? q : 1 - q;
          }
          return v;
        },
        10000);
    ll += m.weights[p] * std::log(lik);
  }
  return ll;
}

WeightedResponseMatrix random_matrix(std::size_t persons, std::size_t items, std::uint64_t seed) {
  Rng rng(seed);
  WeightedResponseMatrix m;
  for (std::size_t i = 0; i < items; ++i) m.items.push_back("i" + std::to_string(i));
  std::vector<double> b(items);
  for (auto& x : b) x = rng.uniform(-1.5, 1.5);
  for (std::size_t p = 0; p < persons; ++p) {
    m.persons.push_back("p" + std::to_string(p));
    m.weights.push_back(rng.bernoulli(0.3) ? 0.5 : 1.0);
    const double theta = rng.normal();
    std::vector<Response> rs;
    for (std::size_t i = 0; i < items; ++i)
      if (rng.bernoulli(0.8)) rs.push_back({static_cast<std::uint32_t>(i), rng.bernoulli(logistic(theta - b[i]))});
    if (rs.empty()) rs.push_back({0, 1});
    m.responses.push_back(rs);
  }
  return m;
}

WeightedResponseMatrix simulated(int persons, int items, std::uint64_t seed, double shift,
                                 data::SyntheticTruth* truth) {
  data::SyntheticSpec spec;
  spec.n_items = items;
  spec.n_users = persons;
  spec.seed = seed;
  spec.location_shift = shift;
  auto logs = data::generate_synthetic_logs(spec);
  if (truth) *truth = logs.truth;
  return data::sessionize(logs.records).matrix;
}

std::vector<double> default_start(const WeightedResponseMatrix& m) {
  std::vector<double> wrong(m.num_items(), 0), total(m.num_items(), 0);
  for (std::size_t p = 0; p < m.num_persons(); ++p)
    for (const auto& r : m.responses[p]) {
      total[r.item] += m.weights[p];
      if (!r.correct) wrong[r.item] += m.weights[p];
    }
  std::vector<double> b(m.num_items());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double q = wrong[i] / total[i];
    b[i] = std::clamp(std::log(q / (1 - q)), -4.0, 4.0);
  }
  return b;
}

}  // namespace

TEST(GaussHermite, OnePointRule) {
  const auto r = irt::gauss_hermite_rule(1);
  ASSERT_EQ(r.nodes.size(), 1u);
  EXPECT_NEAR(r.nodes[0], 0.0, 1e-15);
  EXPECT_NEAR(r.weights[0], kSqrtPi, 1e-14);
}

TEST(GaussHermite, TwoPointRuleFromHermiteRoots) {
  const auto r = irt::gauss_hermite_rule(2);
  ASSERT_EQ(r.nodes.size(), 2u);
  EXPECT_NEAR(r.nodes[0], -1 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(r.nodes[1], 1 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(r.weights[0], kSqrtPi / 2, 1e-14);
  EXPECT_NEAR(r.weights[1], kSqrtPi / 2, 1e-14);
}

TEST(GaussHermite, SixtyNodesIntegrateMoments) {
  const auto r = irt::gauss_hermite_rule(60);
  double m0 = 0, m2 = 0, m4 = 0;
  for (std::size_t k = 0; k < r.nodes.size(); ++k) {
    const double x = r.nodes[k];
    m0 += r.weights[k];
    m2 += r.weights[k] * x * x;
    m4 += r.weights[k] * x * x * x * x;
  }
  EXPECT_NEAR(m0, kSqrtPi, 1e-10);
  EXPECT_NEAR(m2, kSqrtPi / 2, 1e-10);
  EXPECT_NEAR(m4, 3 * kSqrtPi / 4, 1e-10);
  EXPECT_TRUE(std::is_sorted(r.nodes.begin(), r.nodes.end()));
}

TEST(GaussHermite, RejectsNonPositive) {
  EXPECT_THROW(irt::gauss_hermite_rule(0), std::invalid_argument);
  EXPECT_THROW(irt::gauss_hermite_rule(-3), std::invalid_argument);
}

TEST(GaussHermite, StandardNormalVariance) {
  const auto r = irt::standard_normal_rule(60);
  double m0 = 0, m2 = 0;
  for (std::size_t k = 0; k < r.nodes.size(); ++k) {
    m0 += r.weights[k];
    m2 += r.weights[k] * r.nodes[k] * r.nodes[k];
  }
  EXPECT_NEAR(m0, 1.0, 1e-12);
  EXPECT_NEAR(m2, 1.0, 1e-12);
}

TEST(ExpectedP, HalfAtZeroForAnySigma) {
  for (double s : {0.1, 0.5, 1.0, 2.0, 5.0}) EXPECT_NEAR(irt::expected_proportion_correct(0.0, s), 0.5, 1e-10);
}

TEST(ExpectedP, VanishesForVeryHardItems) { EXPECT_LT(irt::expected_proportion_correct(20.0, 1.0), 1e-6); }

TEST(ExpectedP, MatchesDenseTrapezoid) {
  EXPECT_NEAR(irt::expected_proportion_correct(1.0, 1.0), oracle_expected_p(1.0, 1.0, 1000000), 1e-8);
  EXPECT_NEAR(irt::expected_proportion_correct(-2.5, 0.5), oracle_expected_p(-2.5, 0.5, 1000000), 1e-8);
}

TEST(ExpectedP, StrictlyDecreasingAndSymmetric) {
  for (double s : {0.5, 1.0, 2.0}) {
    double prev = 2;
    for (double b = -3; b <= 3.0001; b += 0.5) {
      const double p = irt::expected_proportion_correct(b, s);
      EXPECT_LT(p, prev);
      EXPECT_GT(p, 0);
      EXPECT_LT(p, 1);
      EXPECT_NEAR(p + irt::expected_proportion_correct(-b, s), 1.0, 1e-12);
      prev = p;
    }
  }
}

TEST(MarginalLoglik, DegenerateAbilityGivesLogHalf) {
  WeightedResponseMatrix m{{"p"}, {"i"}, {{{0, 1}}}, {1.0}};
  const std::vector<double> b{0.0};
  EXPECT_NEAR(irt::marginal_loglik(m, b, {1e-9}), std::log(0.5), 1e-9);
  m.responses[0][0].correct = 0;
  EXPECT_NEAR(irt::marginal_loglik(m, b, {1e-9}), std::log(0.5), 1e-9);
}

TEST(MarginalLoglik, EmptyPersonSetIsZero) {
  WeightedResponseMatrix m;
  m.items = {"a"};
  const std::vector<double> b{0.3};
  EXPECT_EQ(irt::marginal_loglik(m, b, {1.0}), 0.0);
}

TEST(MarginalLoglik, MatchesTrapezoidIntegration) {
  const auto m = random_matrix(15, 4, 21);
  const std::vector<double> b{-0.7, 0.1, 0.4, 1.3};
  for (double sigma : {0.6, 1.0, 1.7})
    EXPECT_NEAR(irt::marginal_loglik(m, b, {sigma}), oracle_loglik(m, b, sigma), 1e-6);
}

TEST(MarginalLoglik, GradientMatchesCentralDifferences) {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = random_matrix(20, 5, 100 + rep);
    std::vector<double> b(5);
    for (auto& x : b) x = rng.uniform(-2, 2);
    const irt::AbilityDistribution ab{rng.uniform(0.5, 1.5)};
    const auto g = irt::marginal_loglik_gradient(m, b, ab);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double h = 1e-5;
      auto up = b, dn = b;
      up[i] += h;
      dn[i] -= h;
      const double fd = (irt::marginal_loglik(m, up, ab) - irt::marginal_loglik(m, dn, ab)) / (2 * h);
      EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "rep " << rep << " item " << i;
    }
  }
}

TEST(RaschFit, ExchangeableItemsGetEqualDifficulty) {
  const WeightedResponseMatrix m{{"p1", "p2"}, {"a", "b"}, {{{0, 1}, {1, 0}}, {{0, 0}, {1, 1}}}, {1.0, 1.0}};
  const auto fit = irt::rasch_em_fit(m);
  EXPECT_NEAR(fit.difficulties[0], fit.difficulties[1], 1e-9);
}

TEST(RaschFit, DegenerateItemsAreRejectedByName) {
  const WeightedResponseMatrix m{
      {"p1", "p2"}, {"ok", "easy", "hard"}, {{{0, 1}, {1, 1}, {2, 0}}, {{0, 0}, {1, 1}, {2, 0}}}, {1.0, 1.0}};
  try {
    irt::rasch_em_fit(m);
    FAIL() << "expected DegenerateItemError";
  } catch (const irt::DegenerateItemError& e) {
    EXPECT_EQ(e.item_ids(), (std::vector<std::string>{"easy", "hard"}));
  }
}

TEST(RaschFit, InvalidMatricesAreRejected) {
  WeightedResponseMatrix m{{"p"}, {"a"}, {{{3, 1}}}, {1.0}};
  EXPECT_THROW(irt::rasch_em_fit(m), std::invalid_argument);
  m = {{"p"}, {"a"}, {{{0, 1}}}, {0.0}};
  EXPECT_THROW(irt::rasch_em_fit(m), std::invalid_argument);
}

TEST(RaschFit, DoublingWeightsChangesNothing) {
  auto m = random_matrix(120, 6, 3);
  const auto a = irt::rasch_em_fit(m);
  for (auto& w : m.weights) w *= 2;
  const auto b = irt::rasch_em_fit(m);
  for (std::size_t i = 0; i < a.difficulties.size(); ++i) EXPECT_NEAR(a.difficulties[i], b.difficulties[i], 1e-9);
  EXPECT_NEAR(a.ability.sd, b.ability.sd, 1e-9);
}

TEST(RaschFit, BitIdenticalRefit) {
  const auto m = random_matrix(150, 8, 4);
  const auto a = irt::rasch_em_fit(m);
  const auto b = irt::rasch_em_fit(m);
  EXPECT_EQ(a.difficulties, b.difficulties);
  EXPECT_EQ(a.ability.sd, b.ability.sd);
  EXPECT_EQ(a.log_likelihood_trace, b.log_likelihood_trace);
}

TEST(RaschFit, LogLikelihoodTraceNeverDecreases) {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const auto fit = irt::rasch_em_fit(random_matrix(200, 10, seed));
    ASSERT_GE(fit.log_likelihood_trace.size(), 2u);
    for (std::size_t k = 1; k < fit.log_likelihood_trace.size(); ++k)
      EXPECT_GE(fit.log_likelihood_trace[k], fit.log_likelihood_trace[k - 1] - 1e-8) << "seed " << seed;
  }
}

TEST(RaschFit, ExpectedPConsistentWithDifficulties) {
  const auto fit = irt::rasch_em_fit(random_matrix(200, 6, 12));
  for (std::size_t i = 0; i < fit.difficulties.size(); ++i)
    EXPECT_DOUBLE_EQ(fit.expected_p[i], irt::expected_proportion_correct(fit.difficulties[i], fit.ability.sd));
}

TEST(RaschFit, TranslationLeavesDifferencesInvariant) {
  const double c = 1.7;
  const auto m0 = simulated(300, 10, 77, 0.0, nullptr);
  const auto m1 = simulated(300, 10, 77, c, nullptr);
  irt::RaschConfig cfg;
  cfg.tol = 1e-11;
  cfg.max_iter = 5000;
  cfg.initial_difficulties = default_start(m0);
  const auto a = irt::rasch_em_fit(m0, cfg);
  auto shifted = default_start(m1);
  for (auto& b : shifted) b += c;
  cfg.initial_difficulties = shifted;
  const auto b = irt::rasch_em_fit(m1, cfg);
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  for (std::size_t i = 1; i < a.difficulties.size(); ++i)
    EXPECT_NEAR(a.difficulties[i] - a.difficulties[0], b.difficulties[i] - b.difficulties[0], 1e-6);
}

TEST(RaschFit, RecoversSimulatedDifficulties) {
  data::SyntheticTruth truth;
  const auto m = simulated(500, 40, 42, 0.0, &truth);
  const auto fit = irt::rasch_em_fit(m);
  ASSERT_EQ(fit.item_ids.size(), 40u);
  std::map<std::string, double> true_b;
  for (std::size_t i = 0; i < truth.item_ids.size(); ++i) true_b[truth.item_ids[i]] = truth.difficulties[i];
  std::vector<double> est, tru;
  double sse = 0;
  for (std::size_t i = 0; i < fit.item_ids.size(); ++i) {
    est.push_back(fit.difficulties[i]);
    tru.push_back(true_b.at(fit.item_ids[i]));
    sse += (est.back() - tru.back()) * (est.back() - tru.back());
  }
  EXPECT_GT(stats::pearson(est, tru), 0.98);
  EXPECT_LT(std::sqrt(sse / est.size()), 0.15);
  EXPECT_TRUE(fit.converged);
}
