#include "diffcal/tokens.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace diffcal::tokens {

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\n\r\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::optional<Distribution> normalize_over(std::span<const TokenCandidate> candidates,
                                           std::span<const std::string_view> allowed) {
  double max_lp = -std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    if (!std::isfinite(c.logprob)) continue;
    const auto t = trim(c.token);
    if (std::find(allowed.begin(), allowed.end(), t) != allowed.end()) max_lp = std::max(max_lp, c.logprob);
  }
  if (!std::isfinite(max_lp)) return std::nullopt;
  Distribution d;
  double total = 0;
  for (const auto& c : candidates) {
    if (!std::isfinite(c.logprob)) continue;
    const auto t = trim(c.token);
    if (std::find(allowed.begin(), allowed.end(), t) == allowed.end()) continue;
    const double m = std::exp(c.logprob - max_lp);
    d[std::string(t)] += m;
    total += m;
  }
  for (auto& [tok, p] : d) p /= total;
  return d;
}

LeadingDistribution leading_distribution(const Distribution& d) {
  LeadingDistribution out;
  if (auto it = d.find("1"); it != d.end()) out.p_one = it->second;
  if (auto it = d.find("0"); it != d.end()) out.p_zero = it->second;
  return out;
}

std::array<double, 10> digit_distribution(const Distribution& d) {
  std::array<double, 10> out{};
  for (std::size_t k = 0; k < 10; ++k) {
    if (auto it = d.find(std::string(kDigitTokens[k])); it != d.end()) out[k] = it->second;
  }
  return out;
}

double ev_frac(std::span<const double, 10> digit_probs) {
  double total = 0, ev = 0;
  for (std::size_t d = 0; d < 10; ++d) {
    if (digit_probs[d] < 0) throw std::invalid_argument("ev_frac: negative probability");
    total += digit_probs[d];
    ev += static_cast<double>(d) / 10.0 * digit_probs[d];
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("ev_frac: distribution does not sum to 1");
  return ev;
}

std::string_view to_string(SoftCase c) {
  switch (c) {
    case SoftCase::A: return "A";
    case SoftCase::B_confident: return "B_confident";
    case SoftCase::B_resampled: return "B_resampled";
    case SoftCase::B_fallback: return "B_fallback";
  }
  return "unknown";
}

SoftCase parse_soft_case(std::string_view s) {
  for (auto c : {SoftCase::A, SoftCase::B_confident, SoftCase::B_resampled, SoftCase::B_fallback})
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown soft case '" + std::string(s) + "'");
}

SoftAbsoluteEstimate absolute_soft(LeadingDistribution leading, double frac, SoftCase soft_case) {
  if (leading.p_one < 0 || leading.p_zero < 0 || std::abs(leading.p_one + leading.p_zero - 1.0) > 1e-9)
    throw std::invalid_argument("absolute_soft: leading distribution is not normalized");
  if (!(frac >= 0 && frac <= 1)) throw std::invalid_argument("absolute_soft: frac outside [0,1]");
  SoftAbsoluteEstimate e;
  e.p_leading_one = leading.p_one;
  e.p_leading_zero = leading.p_zero;
  e.ev_frac = frac;
  e.p_soft = leading.p_one + leading.p_zero * frac;
  e.soft_case = soft_case;
  return e;
}

SoftAbsoluteEstimate hard_absolute_estimate(double parsed) {
  SoftAbsoluteEstimate e;
  const bool one = parsed >= 1.0;
  e.p_leading_one = one ? 1.0 : 0.0;
  e.p_leading_zero = one ? 0.0 : 1.0;
  e.ev_frac = one ? 0.0 : parsed;
  e.p_soft = parsed;
  e.soft_case = SoftCase::A;
  e.hard_fallback = true;
  return e;
}

std::string_view to_string(PairwiseSource s) {
  return s == PairwiseSource::normalized_top_k ? "normalized_top_k" : "hard_fallback";
}

PairwiseSource parse_pairwise_source(std::string_view s) {
  if (s == "normalized_top_k") return PairwiseSource::normalized_top_k;
  if (s == "hard_fallback") return PairwiseSource::hard_fallback;
  throw std::invalid_argument("unknown pairwise source '" + std::string(s) + "'");
}

PairwiseSoftRecord pairwise_soft(std::span<const TokenCandidate> candidates, int sampled_decision) {
  if (auto d = normalize_over(candidates, kPairwiseTokens)) {
    return {leading_distribution(*d).p_one, PairwiseSource::normalized_top_k};
  }
  return {sampled_decision == 1 ? 1.0 : 0.0, PairwiseSource::hard_fallback};
}

}  // namespace diffcal::tokens
