#include <spdlog/spdlog.h>

#include <exception>
#include <thread>

#include "diffcal/elicitation.hpp"

namespace diffcal::elicit {
namespace {

const std::vector<tokens::TokenCandidate>& top_at(const llm::CompletionResponse& r, std::size_t i) {
  return r.positions.at(i).top;
}

std::optional<double> digit_frac(const llm::CompletionResponse& r, const DecisionPositions& loc) {
  if (!loc.digit) return std::nullopt;
  const auto dist = tokens::normalize_over(top_at(r, *loc.digit), tokens::kDigitTokens);
  if (!dist) return std::nullopt;
  const auto probs = tokens::digit_distribution(*dist);
  return tokens::ev_frac(probs);
}

PromptItem prompt_item(const data::ItemBank& bank, const std::string& id) {
  const auto& e = bank.at(id);
  return {e.text, e.time_limit_seconds};
}

}  // namespace

bool RequestBudget::take() {
  if (limit_ == 0) {
    used_.fetch_add(1);
    return true;
  }
  auto cur = used_.load();
  while (cur < limit_)
    if (used_.compare_exchange_weak(cur, cur + 1)) return true;
  return false;
}

CaseBOutcome resolve_case_b(tokens::LeadingDistribution first_leading,
                            const std::function<llm::CompletionResponse(int attempt)>& call,
                            const tokens::CaseBConfig& config) {
  if (first_leading.p_one >= config.conf_threshold)
    return {tokens::absolute_soft(first_leading, config.fallback_frac, tokens::SoftCase::B_confident), 1};
  for (int attempt = 2; attempt <= config.max_attempts; ++attempt) {
    const auto r = call(attempt);
    const auto parsed = parse_bracket_output(r.text, Format::absolute);
    if (!parsed || *parsed >= 1.0) continue;
    const auto loc = locate_decision(r, Format::absolute);
    if (!loc) continue;
    if (const auto frac = digit_frac(r, *loc))
      return {tokens::absolute_soft(first_leading, *frac, tokens::SoftCase::B_resampled), attempt};
  }
  return {tokens::absolute_soft(first_leading, config.fallback_frac, tokens::SoftCase::B_fallback),
          std::max(config.max_attempts, 1)};
}

std::vector<std::vector<std::string>> cell_work(const DesignCell& cell, const CellInputs& inputs) {
  if (!inputs.sample) throw ConfigError("cell " + cell.id() + ": no item sample");
  std::vector<std::vector<std::string>> work;
  if (cell.format == Format::absolute) {
    for (const auto& id : inputs.sample->item_ids()) work.push_back({id});
  } else {
    if (!inputs.schedule) throw ConfigError("cell " + cell.id() + ": pairwise cell without a pair schedule");
    for (const auto& [a, b] : inputs.schedule->pairs) work.push_back({a, b});
  }
  return work;
}

JudgementRecord judge(const DesignCell& cell, std::span<const std::string> item_ids, const CellInputs& inputs,
                      llm::ChatBackend& backend, const ElicitConfig& config, RequestBudget& budget) {
  if (!inputs.bank) throw ConfigError("no item bank");
  const auto& profile = backend.profile();
  if (cell.decision == Decision::soft && !profile.supports_logprobs)
    throw ConfigError("backend '" + profile.name + "' does not expose log-probabilities; soft cells need them");

  std::vector<PromptItem> items;
  for (const auto& id : item_ids) items.push_back(prompt_item(*inputs.bank, id));
  std::optional<std::array<Anchor, 2>> anchors;
  if (cell.prompting == Prompting::few_shot) {
    if (!inputs.sample) throw ConfigError("few-shot cell " + cell.id() + " needs the sample's anchor items");
    std::array<Anchor, 2> a;
    for (int k = 0; k < 2; ++k) {
      const auto& s = inputs.sample->anchors[k];
      a[k] = {inputs.bank->at(s.item_id).text, s.expected_p};
    }
    anchors = a;
  }
  const auto prompt = build_prompt(template_for(cell.format, cell.prompting), items, inputs.grade, cell.domain, anchors);

  // Hard and soft cells send identical requests, so a shared cache serves both.
  llm::ChatRequest req;
  req.profile = profile.name;
  req.system_message = prompt.system_message;
  req.user_message = prompt.user_message;
  req.params.temperature = config.temperature;
  req.params.top_logprobs = profile.supports_logprobs
                                ? (config.top_logprobs > 0 ? std::min(config.top_logprobs, profile.top_k_limit)
                                                           : profile.top_k_limit)
                                : 0;

  JudgementRecord rec;
  rec.cell = cell;
  rec.item_ids.assign(item_ids.begin(), item_ids.end());
  rec.key = judgement_key(cell, item_ids);

  int ordinal = 0;
  llm::Usage total;
  bool usage_complete = true;
  auto call = [&]() {
    if (!budget.take()) throw BudgetExhausted();
    req.ordinal = ordinal++;
    auto r = backend.complete(req);
    rec.calls.push_back({llm::request_key(req), req.ordinal, r.usage, r.latency_ms});
    total += r.usage;
    rec.latency_ms += r.latency_ms;
    if (r.usage.prompt_tokens == 0 && r.usage.completion_tokens == 0) usage_complete = false;
    return r;
  };
  auto finish = [&]() {
    rec.attempts = ordinal;
    if (usage_complete) rec.usage = total;
    return rec;
  };

  const Format fmt = cell.format;
  llm::CompletionResponse first;
  std::optional<double> parsed;
  for (int t = 0; t <= config.retry_max; ++t) {
    first = call();
    parsed = parse_bracket_output(first.text, fmt);
    if (parsed) break;
  }
  rec.raw_text = first.text;
  if (!parsed) {
    rec.warning = "no parsable answer after " + std::to_string(ordinal) + " attempts";
    return finish();
  }
  rec.parsed = parsed;
  if (cell.decision == Decision::hard) return finish();

  const auto loc = locate_decision(first, fmt);
  if (loc) {
    rec.decision_candidates.push_back(top_at(first, *loc->leading));
    if (loc->digit) rec.decision_candidates.push_back(top_at(first, *loc->digit));
  }
  const std::string shape_warning = "decision tokens not found in the token stream; hard value used";

  if (fmt == Format::pairwise) {
    if (loc) {
      rec.soft_pairwise = tokens::pairwise_soft(top_at(first, *loc->leading), static_cast<int>(*parsed));
    } else {
      rec.soft_pairwise = tokens::PairwiseSoftRecord{*parsed, tokens::PairwiseSource::hard_fallback};
      rec.warning = shape_warning;
    }
    return finish();
  }

  std::optional<tokens::Distribution> leading;
  if (loc) leading = tokens::normalize_over(top_at(first, *loc->leading), tokens::kLeadingTokens);
  if (!leading) {
    rec.soft_absolute = tokens::hard_absolute_estimate(*parsed);
    rec.warning = shape_warning;
    return finish();
  }
  const auto ld = tokens::leading_distribution(*leading);
  if (*parsed < 1.0) {
    if (const auto frac = digit_frac(first, *loc)) {
      rec.soft_absolute = tokens::absolute_soft(ld, *frac, tokens::SoftCase::A);
    } else {
      rec.soft_absolute = tokens::hard_absolute_estimate(*parsed);
      rec.warning = shape_warning;
    }
    return finish();
  }
  const auto outcome = resolve_case_b(ld, [&](int) { return call(); }, config.case_b);
  rec.soft_absolute = outcome.estimate;
  return finish();
}

std::vector<JudgementRecord> run_cell(const DesignCell& cell, const CellInputs& inputs, llm::ChatBackend& backend,
                                      const ElicitConfig& config, JudgementLog& log) {
  const auto work = cell_work(cell, inputs);
  std::vector<std::string> keys;
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < work.size(); ++i) {
    keys.push_back(judgement_key(cell, work[i]));
    if (!log.contains(keys.back())) pending.push_back(i);
  }

  RequestBudget budget(config.max_requests);
  std::mutex mu;
  std::vector<std::optional<JudgementRecord>> done(pending.size());
  std::size_t flushed = 0;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::string stop_reason;
  bool backend_failure = false;
  std::exception_ptr fatal;

  // Completed records are appended in schedule order; out-of-order results
  // wait in `done` until their predecessors finish.
  auto flush_ready = [&]() {
    while (flushed < done.size() && done[flushed]) {
      log.append(*done[flushed]);
      ++flushed;
    }
  };
  auto fail = [&](std::string reason, bool backend, std::exception_ptr ex) {
    std::lock_guard lock(mu);
    if (!stop.exchange(true)) {
      stop_reason = std::move(reason);
      backend_failure = backend;
      fatal = ex;
    }
  };
  auto worker = [&]() {
    while (!stop.load()) {
      const auto i = next.fetch_add(1);
      if (i >= pending.size()) break;
      try {
        auto rec = judge(cell, work[pending[i]], inputs, backend, config, budget);
        std::lock_guard lock(mu);
        done[i] = std::move(rec);
        flush_ready();
      } catch (const BudgetExhausted&) {
        fail("request budget of " + std::to_string(config.max_requests) + " calls reached", false, nullptr);
      } catch (const llm::GatewayError& e) {
        fail(e.what(), true, nullptr);
      } catch (...) {
        fail("unexpected error", false, std::current_exception());
      }
    }
  };

  const auto n_threads = std::min<std::size_t>(std::max(config.parallelism, 1), pending.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& d : done)
    if (d && !log.contains(d->key)) log.append(*d);

  if (fatal) std::rethrow_exception(fatal);
  if (stop) {
    std::size_t completed = 0;
    for (const auto& k : keys) completed += log.contains(k);
    spdlog::warn("cell {} interrupted at {}/{}: {}", cell.id(), completed, work.size(), stop_reason);
    throw CampaignInterrupted("cell " + cell.id() + " interrupted at " + std::to_string(completed) + "/" +
                                  std::to_string(work.size()) + ": " + stop_reason,
                              completed, work.size(), backend_failure);
  }

  std::map<std::string, JudgementRecord> by_key;
  for (auto& r : log.records())
    if (r.cell == cell) by_key.emplace(r.key, std::move(r));
  std::vector<JudgementRecord> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(by_key.at(k));
  return out;
}

}  // namespace diffcal::elicit
