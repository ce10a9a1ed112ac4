#pragma once

// Prompt rendering, pair scheduling, output parsing and the per-cell
// judgement campaign (including the resampling protocol for absolute
// judgements whose first answer is 1.0).

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffcal/data.hpp"
#include "diffcal/domain.hpp"
#include "diffcal/gateway.hpp"
#include "diffcal/tokens.hpp"

namespace diffcal::elicit {

enum class Format { absolute, pairwise };
enum class Decision { hard, soft };
enum class Prompting { zero_shot, few_shot };

std::string_view to_string(Format f);
std::string_view to_string(Decision d);
std::string_view to_string(Prompting p);
Format parse_format(std::string_view s);
Decision parse_decision(std::string_view s);
Prompting parse_prompting(std::string_view s);

struct DesignCell {
  std::string model;
  Format format = Format::absolute;
  Decision decision = Decision::hard;
  Prompting prompting = Prompting::zero_shot;
  Domain domain = Domain::addition;

  // "model/format/decision/prompting/domain"
  std::string id() const;
  // Same without the domain; identifies a condition across domains.
  std::string condition() const;
  bool operator==(const DesignCell&) const = default;
  auto operator<=>(const DesignCell&) const = default;
};

DesignCell parse_cell_id(std::string_view id);

// 2 x 2 x 2 cells per model and domain, in a fixed order.
std::vector<DesignCell> full_design(std::span<const std::string> models, std::span<const Domain> domains);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- prompts

enum class TemplateId { A, B, C, D };  // absolute/pairwise x zero/few-shot

TemplateId template_for(Format f, Prompting p);
std::string_view template_system(TemplateId t);
std::string_view template_user(TemplateId t);
std::string_view template_name(TemplateId t);

struct PromptItem {
  std::string text;
  int time_limit_seconds = 0;
};

struct Anchor {
  std::string text;
  double expected_p = 0;
};

struct PromptBundle {
  std::string system_message;
  std::string user_message;
  bool placeholders_resolved = false;
};

// Integer percentage, half rounded up: 0.87 -> "87%", 0.125 -> "13%".
std::string format_percent(double p);

// Replaces <NAME> markers from `values` in one left-to-right pass; text that
// comes from a substituted value is never rescanned.
std::string substitute(std::string_view tpl, const std::map<std::string, std::string>& values,
                       std::set<std::string>* unresolved = nullptr);

// Absolute templates take one item, pairwise templates two (presented order).
// The pairwise time limit is the larger of the two.
PromptBundle build_prompt(TemplateId t, std::span<const PromptItem> items, int grade, Domain domain,
                          const std::optional<std::array<Anchor, 2>>& anchors = std::nullopt);

// ---------------------------------------------------------------- schedule

struct PairSchedule {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> pairs;  // (first, second) as presented
};

// Every unordered pair once; within-pair order from seeded coin flips, then
// the whole list shuffled with the same generator.
PairSchedule schedule_pairs(std::span<const std::string> item_ids, std::uint64_t seed);
// Requires exactly 4 * n_per_stratum items (60 at the default sample size).
PairSchedule schedule_pairs(const data::StratifiedSample& sample, std::uint64_t seed);

// ---------------------------------------------------------------- parsing

// First [[...]] group. Absolute accepts 0, 1, 0.d and 1.0; pairwise 0 or 1.
std::optional<double> parse_bracket_output(std::string_view raw, Format format);

struct DecisionPositions {
  std::optional<std::size_t> leading;
  std::optional<std::size_t> dot;
  std::optional<std::size_t> digit;
};

// Locates the decision tokens inside the first [[...]] of the token stream:
// the first non-blank token there must be "0" or "1"; for absolute output
// the next non-blank tokens are "." and a single digit when present.
// Returns nullopt when the stream does not have that shape.
std::optional<DecisionPositions> locate_decision(const llm::CompletionResponse& response, Format format);

// ---------------------------------------------------------------- records

struct CallRecord {
  std::string key;
  int ordinal = 0;
  llm::Usage usage;
  double latency_ms = 0;

  bool operator==(const CallRecord&) const = default;
};

struct JudgementRecord {
  DesignCell cell;
  std::vector<std::string> item_ids;  // pairwise: presented order
  std::string raw_text;               // output the parsed value came from
  std::optional<double> parsed;       // nullopt: parse failure after all retries
  // Candidate lists at the located decision positions of the first call.
  std::vector<std::vector<tokens::TokenCandidate>> decision_candidates;
  std::optional<tokens::SoftAbsoluteEstimate> soft_absolute;
  std::optional<tokens::PairwiseSoftRecord> soft_pairwise;
  int attempts = 0;
  std::optional<llm::Usage> usage;
  double latency_ms = 0;
  std::vector<CallRecord> calls;
  std::string key;
  std::string warning;

  bool operator==(const JudgementRecord&) const = default;
};

// "model|format|decision|prompting|domain|item[|item]"
std::string judgement_key(const DesignCell& cell, std::span<const std::string> item_ids);

std::string serialize_record(const JudgementRecord& r);
JudgementRecord parse_record(std::string_view json_line);

class LogCorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only JSONL judgement log. A torn final line (interrupted write) is
// dropped on open; any other unreadable line is an error.
class JudgementLog {
 public:
  explicit JudgementLog(std::filesystem::path path = {});

  bool contains(const std::string& key) const;
  void append(const JudgementRecord& r);
  std::vector<JudgementRecord> records() const;
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<JudgementRecord> records_;
  std::map<std::string, std::size_t> index_;
  std::ofstream out_;
};

std::vector<JudgementRecord> read_judgement_log(const std::filesystem::path& path);

// ---------------------------------------------------------------- campaign

struct ElicitConfig {
  int retry_max = 3;  // parse-failure retries after the first call
  int parallelism = 4;
  double temperature = 1.0;
  int top_logprobs = 0;  // 0: the backend's limit
  tokens::CaseBConfig case_b;
  // Backend calls allowed in one run_cell invocation; 0 = unlimited.
  std::size_t max_requests = 0;
};

struct CellInputs {
  const data::ItemBank* bank = nullptr;
  const data::StratifiedSample* sample = nullptr;
  const PairSchedule* schedule = nullptr;  // pairwise cells only
  int grade = 0;
};

// Work was cut short (backend failure or request budget). Everything
// finished before that point is already in the log; rerunning resumes.
class CampaignInterrupted : public std::runtime_error {
 public:
  CampaignInterrupted(const std::string& what, std::size_t completed, std::size_t total, bool backend_failure)
      : std::runtime_error(what), completed_(completed), total_(total), backend_failure_(backend_failure) {}
  std::size_t completed() const { return completed_; }
  std::size_t total() const { return total_; }
  bool backend_failure() const { return backend_failure_; }

 private:
  std::size_t completed_, total_;
  bool backend_failure_;
};

// Counts backend calls against an optional budget. Shared by the workers of a
// cell.
class RequestBudget {
 public:
  explicit RequestBudget(std::size_t limit = 0) : limit_(limit) {}
  // False once the budget is spent.
  bool take();
  std::size_t used() const { return used_.load(); }

 private:
  std::size_t limit_;
  std::atomic<std::size_t> used_{0};
};

class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted() : std::runtime_error("request budget exhausted") {}
};

// One judgement: first call, parse retries, soft extraction and (absolute
// soft, answer 1.0) the resampling protocol.
JudgementRecord judge(const DesignCell& cell, std::span<const std::string> item_ids, const CellInputs& inputs,
                      llm::ChatBackend& backend, const ElicitConfig& config, RequestBudget& budget);

// Result of the resampling protocol given the first call's leading
// distribution; issues further calls through `call` (ordinal -> response).
struct CaseBOutcome {
  tokens::SoftAbsoluteEstimate estimate;
  int attempts = 1;  // including the first call
};
CaseBOutcome resolve_case_b(tokens::LeadingDistribution first_leading,
                            const std::function<llm::CompletionResponse(int attempt)>& call,
                            const tokens::CaseBConfig& config = {});

// Judges every schedule entry of the cell that is not yet in the log, with
// bounded parallelism, appending in schedule order. Returns the cell's
// records in schedule order.
std::vector<JudgementRecord> run_cell(const DesignCell& cell, const CellInputs& inputs, llm::ChatBackend& backend,
                                      const ElicitConfig& config, JudgementLog& log);

// Item ids per judgement of a cell, in schedule order.
std::vector<std::vector<std::string>> cell_work(const DesignCell& cell, const CellInputs& inputs);

}  // namespace diffcal::elicit
