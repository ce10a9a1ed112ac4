#pragma once

// Soft difficulty estimates from top-k token log-probabilities.
//
// Absolute judgements "[[I.D]]" combine the leading integer token I in {0,1}
// with the fractional digit D in {0..9}:
//
//   p_soft = P(I=1) + P(I=0) * EV_frac,   EV_frac = sum_d (d/10) P(D=d)
//
// where both distributions are top-k candidates renormalized over the
// relevant token subset. Pairwise judgements use the renormalized mass of
// "1" over {"1", "0"} at the decision position.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffcal::tokens {

struct TokenCandidate {
  std::string token;
  double logprob = 0;

  bool operator==(const TokenCandidate&) const = default;
};

using Distribution = std::map<std::string, double>;

inline constexpr std::array<std::string_view, 2> kLeadingTokens = {"0", "1"};
inline constexpr std::array<std::string_view, 10> kDigitTokens = {"0", "1", "2", "3", "4",
                                                                  "5", "6", "7", "8", "9"};
inline constexpr std::array<std::string_view, 2> kPairwiseTokens = {"1", "0"};

std::string_view trim(std::string_view s);

// Exponentiates the candidates whose whitespace-trimmed token is in
// `allowed`, summing duplicates, and renormalizes to 1. nullopt means no
// allowed token carried mass (the caller decides the fallback).
std::optional<Distribution> normalize_over(std::span<const TokenCandidate> candidates,
                                           std::span<const std::string_view> allowed);

struct LeadingDistribution {
  double p_one = 0;
  double p_zero = 0;
};

LeadingDistribution leading_distribution(const Distribution& d);
std::array<double, 10> digit_distribution(const Distribution& d);

// sum_d (d/10) P(D=d). Throws if the probabilities do not sum to 1 (1e-9).
double ev_frac(std::span<const double, 10> digit_probs);

enum class SoftCase { A, B_confident, B_resampled, B_fallback };
std::string_view to_string(SoftCase c);
SoftCase parse_soft_case(std::string_view s);

struct SoftAbsoluteEstimate {
  double p_leading_one = 0;
  double p_leading_zero = 0;
  double ev_frac = 0;
  double p_soft = 0;
  SoftCase soft_case = SoftCase::A;
  // Set when the token stream did not have the expected shape and the
  // sampled value stands in for the soft estimate.
  bool hard_fallback = false;

  bool operator==(const SoftAbsoluteEstimate&) const = default;
};

SoftAbsoluteEstimate absolute_soft(LeadingDistribution leading, double frac, SoftCase soft_case);

// Used when the decision positions cannot be read: reproduces the sampled
// value as a point mass.
SoftAbsoluteEstimate hard_absolute_estimate(double parsed);

enum class PairwiseSource { normalized_top_k, hard_fallback };
std::string_view to_string(PairwiseSource s);
PairwiseSource parse_pairwise_source(std::string_view s);

struct PairwiseSoftRecord {
  double p_first_harder = 0;
  PairwiseSource source = PairwiseSource::normalized_top_k;

  bool operator==(const PairwiseSoftRecord&) const = default;
};

// `sampled_decision` is the hard answer (1 = first item harder) used when
// neither "1" nor "0" appears among the candidates.
PairwiseSoftRecord pairwise_soft(std::span<const TokenCandidate> candidates, int sampled_decision);

struct CaseBConfig {
  double conf_threshold = 0.99;
  int max_attempts = 100;  // includes the first call
  double fallback_frac = 0.9;
};

}  // namespace diffcal::tokens
