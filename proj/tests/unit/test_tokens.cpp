#include <gtest/gtest.h>

#include <cmath>

#include "diffcal/rng.hpp"
#include "diffcal/tokens.hpp"

using namespace diffcal;
using namespace diffcal::tokens;

namespace {

TokenCandidate c(std::string t, double p) { return {std::move(t), std::log(p)}; }

const std::array<std::string_view, 2> kOneZero = {"1", "0"};

}  // namespace

TEST(NormalizeOver, RenormalizesAllowedSubset) {
  const std::vector<TokenCandidate> cands{c("1", 0.6), c("0", 0.2), c("2", 0.2)};
  const auto d = normalize_over(cands, kOneZero);
  ASSERT_TRUE(d);
  EXPECT_NEAR(d->at("1"), 0.75, 1e-12);
  EXPECT_NEAR(d->at("0"), 0.25, 1e-12);
}

TEST(NormalizeOver, SingletonGetsAllMass) {
  const std::vector<TokenCandidate> cands{c("0", 0.01), c("]]", 0.9)};
  const auto d = normalize_over(cands, kOneZero);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->size(), 1u);
  EXPECT_DOUBLE_EQ(d->at("0"), 1.0);
}

TEST(NormalizeOver, NoAllowedTokenIsNoMass) {
  const std::vector<TokenCandidate> cands{c("]", 0.7), c("x", 0.3)};
  EXPECT_FALSE(normalize_over(cands, kOneZero).has_value());
}

TEST(NormalizeOver, TrimsWhitespaceAndSumsDuplicates) {
  const std::vector<TokenCandidate> cands{c("1", 0.3), c(" 1", 0.3), c("0\n", 0.2), c("10", 0.2)};
  const auto d = normalize_over(cands, kOneZero);
  ASSERT_TRUE(d);
  EXPECT_NEAR(d->at("1"), 0.75, 1e-12);
  EXPECT_NEAR(d->at("0"), 0.25, 1e-12);
}

TEST(NormalizeOver, AlwaysSumsToOne) {
  Rng rng(1);
  const std::vector<std::string> pool{"0", "1", "2", " 3", "9", ".", "]]", "x"};
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<TokenCandidate> cands;
    const auto k = 1 + rng.uniform_index(8);
    for (std::size_t i = 0; i < k; ++i) cands.push_back(c(pool[rng.uniform_index(pool.size())], rng.uniform(1e-6, 1)));
    const auto d = normalize_over(cands, kDigitTokens);
    if (!d) continue;
    double s = 0;
    for (const auto& [t, p] : *d) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(EvFrac, PointMassesAndUniform) {
  std::array<double, 10> p{};
  p[5] = 1;
  EXPECT_DOUBLE_EQ(ev_frac(p), 0.5);
  p = {};
  p[0] = 1;
  EXPECT_DOUBLE_EQ(ev_frac(p), 0.0);
  p.fill(0.1);
  EXPECT_NEAR(ev_frac(p), 0.45, 1e-15);
  p.fill(0.2);
  EXPECT_THROW(ev_frac(p), std::invalid_argument);
}

TEST(DigitDistribution, FromNormalizedMap) {
  const std::vector<TokenCandidate> cands{c("7", 0.3), c("3", 0.1), c(".", 0.6)};
  const auto d = normalize_over(cands, kDigitTokens);
  ASSERT_TRUE(d);
  const auto p = digit_distribution(*d);
  EXPECT_NEAR(p[7], 0.75, 1e-12);
  EXPECT_NEAR(p[3], 0.25, 1e-12);
  EXPECT_NEAR(ev_frac(p), 0.6, 1e-12);
}

TEST(AbsoluteSoft, FormulaExamples) {
  auto e = absolute_soft({0.2, 0.8}, 0.5, SoftCase::A);
  EXPECT_NEAR(e.p_soft, 0.6, 1e-12);
  EXPECT_EQ(e.soft_case, SoftCase::A);
  EXPECT_FALSE(e.hard_fallback);
  e = absolute_soft({1.0, 0.0}, 0.3, SoftCase::A);
  EXPECT_DOUBLE_EQ(e.p_soft, 1.0);
  e = absolute_soft({0.995, 0.005}, 0.9, SoftCase::B_confident);
  EXPECT_NEAR(e.p_soft, 0.9995, 1e-12);
  EXPECT_EQ(e.soft_case, SoftCase::B_confident);
}

TEST(AbsoluteSoft, MonotoneAndBounded) {
  Rng rng(2);
  for (int rep = 0; rep < 1000; ++rep) {
    const double p1 = rng.uniform01(), f = rng.uniform01(), dp = rng.uniform(0, 1 - p1), df = rng.uniform(0, 1 - f);
    const auto base = absolute_soft({p1, 1 - p1}, f, SoftCase::A);
    EXPECT_GE(base.p_soft, 0);
    EXPECT_LE(base.p_soft, 1);
    EXPECT_NEAR(base.p_soft, base.p_leading_one + base.p_leading_zero * base.ev_frac, 1e-12);
    EXPECT_GE(absolute_soft({p1 + dp, 1 - p1 - dp}, f, SoftCase::A).p_soft, base.p_soft - 1e-15);
    EXPECT_GE(absolute_soft({p1, 1 - p1}, f + df, SoftCase::A).p_soft, base.p_soft - 1e-15);
  }
}

TEST(AbsoluteSoft, HardEstimateReproducesParsedValue) {
  const auto e = hard_absolute_estimate(0.7);
  EXPECT_TRUE(e.hard_fallback);
  EXPECT_NEAR(e.p_soft, 0.7, 1e-12);
  EXPECT_DOUBLE_EQ(hard_absolute_estimate(1.0).p_soft, 1.0);
}

TEST(PairwiseSoft, Examples) {
  std::vector<TokenCandidate> cands{c("1", 0.9), c("0", 0.1)};
  auto r = pairwise_soft(cands, 1);
  EXPECT_NEAR(r.p_first_harder, 0.9, 1e-12);
  EXPECT_EQ(r.source, PairwiseSource::normalized_top_k);
  cands = {c("1", 0.3), c("0", 0.3)};
  EXPECT_NEAR(pairwise_soft(cands, 0).p_first_harder, 0.5, 1e-12);
  cands = {c("]", 1.0)};
  r = pairwise_soft(cands, 0);
  EXPECT_EQ(r.p_first_harder, 0.0);
  EXPECT_EQ(r.source, PairwiseSource::hard_fallback);
  EXPECT_EQ(pairwise_soft(cands, 1).p_first_harder, 1.0);
}

TEST(PairwiseSoft, MirroringComplements) {
  Rng rng(3);
  for (int rep = 0; rep < 1000; ++rep) {
    const double a = rng.uniform(1e-4, 1), b = rng.uniform(1e-4, 1), x = rng.uniform(1e-4, 1);
    const std::vector<TokenCandidate> orig{c("1", a), c("0", b), c("[", x)};
    const std::vector<TokenCandidate> mirrored{c("1", b), c("0", a), c("[", x)};
    EXPECT_NEAR(pairwise_soft(mirrored, 0).p_first_harder, 1 - pairwise_soft(orig, 1).p_first_harder, 1e-12);
  }
}

TEST(SoftCaseNames, RoundTrip) {
  for (auto k : {SoftCase::A, SoftCase::B_confident, SoftCase::B_resampled, SoftCase::B_fallback})
    EXPECT_EQ(parse_soft_case(to_string(k)), k);
  for (auto k : {PairwiseSource::normalized_top_k, PairwiseSource::hard_fallback})
    EXPECT_EQ(parse_pairwise_source(to_string(k)), k);
}
