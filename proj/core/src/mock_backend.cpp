#include <algorithm>
#include <array>
#include <cmath>

#include "diffcal/gateway.hpp"
#include "diffcal/psychometrics.hpp"
#include "diffcal/rng.hpp"

namespace diffcal::llm {
namespace {

std::optional<std::string> between(const std::string& s, std::string_view open, std::string_view close) {
  const auto a = s.find(open);
  if (a == std::string::npos) return std::nullopt;
  const auto from = a + open.size();
  const auto b = s.find(close, from);
  if (b == std::string::npos) return std::nullopt;
  return s.substr(from, b - from);
}

double lookup(const std::map<std::string, double>& truth, const std::string& text) {
  const auto it = truth.find(text);
  if (it == truth.end()) throw GatewayError("mock judge: unknown item text '" + text + "'");
  return it->second;
}

std::vector<tokens::TokenCandidate> top_candidates(std::vector<std::pair<std::string, double>> probs,
                                                   int k) {
  std::stable_sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<tokens::TokenCandidate> out;
  for (const auto& [tok, p] : probs) {
    if (static_cast<int>(out.size()) >= k) break;
    if (!(p > 0)) continue;
    out.push_back({tok, std::log(p)});
  }
  return out;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

MockJudgeBackend::MockJudgeBackend(BackendProfile profile, std::map<std::string, double> difficulty_by_text,
                                   MockNoise noise, std::uint64_t seed)
    : profile_(std::move(profile)), truth_(std::move(difficulty_by_text)), noise_(noise), seed_(seed) {
  profile_.validate();
  if (noise_.tau < 0 || noise_.absolute_logit_sd < 0 || !(noise_.digit_spread > 0) || !(noise_.ability_sd > 0))
    throw std::invalid_argument("mock judge: invalid noise settings");
}

std::size_t MockJudgeBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

CompletionResponse MockJudgeBackend::complete(const ChatRequest& request) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  const std::string key = request_key(request);
  Rng rng(derive_seed(seed_, std::stoull(key.substr(0, 16), nullptr, 16)));
  const int k = request.params.top_logprobs > 0 ? std::min(request.params.top_logprobs, profile_.top_k_limit) : 0;
  const auto& user = request.user_message;

  std::vector<std::string> toks;
  std::vector<std::vector<tokens::TokenCandidate>> tops;
  std::vector<double> emitted_prob;

  if (auto a = between(user, "--- Task A ---\n", "\n\n--- Task B ---\n")) {
    const auto b_start = user.find("\n\n--- Task B ---\n") + std::string_view("\n\n--- Task B ---\n").size();
    const auto b_end = user.find("\n\nWhich task", b_start);
    if (b_end == std::string::npos) throw GatewayError("mock judge: unrecognized pairwise prompt");
    const double d = lookup(truth_, *a) - lookup(truth_, user.substr(b_start, b_end - b_start));
    double p_one;
    if (noise_.tau == 0.0)
      p_one = d > 0 ? 1.0 : (d < 0 ? 0.0 : 0.5);
    else
      p_one = logistic(d / noise_.tau);
    const std::string decision = rng.bernoulli(p_one) ? "1" : "0";
    toks = {"[[", decision, "]]"};
    emitted_prob = {1.0, decision == "1" ? p_one : 1.0 - p_one, 1.0};
    tops.assign(3, {});
    if (k > 0) {
      tops[0] = {{"[[", 0.0}};
      tops[1] = top_candidates({{"1", p_one}, {"0", 1.0 - p_one}}, k);
      tops[2] = {{"]]", 0.0}};
    }
  } else {
    const auto marker = user.find("explanations");
    const auto start = marker == std::string::npos ? std::string::npos : user.find("\n\n", marker);
    if (start == std::string::npos) throw GatewayError("mock judge: unrecognized prompt");
    const double b = lookup(truth_, user.substr(start + 2));
    const double b_judged = b + (noise_.absolute_logit_sd > 0 ? rng.normal(0.0, noise_.absolute_logit_sd) : 0.0);
    const double p_hat = irt::expected_proportion_correct(b_judged, noise_.ability_sd);

    // Discretized answer distribution over 0.0, 0.1, ..., 1.0.
    std::array<double, 11> w{};
    double total = 0;
    for (int v = 0; v <= 10; ++v) {
      const double z = (v / 10.0 - p_hat) / noise_.digit_spread;
      w[v] = std::exp(-0.5 * z * z);
      total += w[v];
    }
    for (auto& x : w) x /= total;
    double u = rng.uniform01(), acc = 0;
    int value = 10;
    for (int v = 0; v <= 10; ++v) {
      acc += w[v];
      if (u < acc) {
        value = v;
        break;
      }
    }
    const double p_int_one = w[10];
    const std::string lead = value == 10 ? "1" : "0";
    const std::string digit = value == 10 ? "0" : std::to_string(value);
    toks = {"[[", lead, ".", digit, "]]"};
    emitted_prob = {1.0, value == 10 ? p_int_one : 1.0 - p_int_one, 1.0,
                    value == 10 ? 1.0 : w[value] / (1.0 - p_int_one), 1.0};
    tops.assign(5, {});
    if (k > 0) {
      tops[0] = {{"[[", 0.0}};
      tops[1] = top_candidates({{"1", p_int_one}, {"0", 1.0 - p_int_one}}, k);
      tops[2] = {{".", 0.0}};
      if (lead == "1") {
        tops[3] = {{"0", 0.0}};
      } else {
        std::vector<std::pair<std::string, double>> digits;
        const double frac_total = 1.0 - p_int_one;
        for (int v = 0; v < 10; ++v) digits.emplace_back(std::to_string(v), w[v] / frac_total);
        tops[3] = top_candidates(std::move(digits), k);
      }
      tops[4] = {{"]]", 0.0}};
    }
  }
  const auto prompt_tokens =
      static_cast<std::int64_t>((request.system_message.size() + request.user_message.size()) / 4);
  auto r = make_response(toks, tops, Usage{prompt_tokens, static_cast<std::int64_t>(toks.size())});
  for (std::size_t i = 0; i < toks.size(); ++i)
    if (emitted_prob[i] > 0) r.positions[i].logprob = std::log(emitted_prob[i]);
  return r;
}

}  // namespace diffcal::llm
