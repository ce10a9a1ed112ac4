#pragma once

// Agreement between judged and empirical difficulty: Spearman correlations,
// a paired per-domain bootstrap with group means and contrasts, cost
// accounting and report tables.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/bradley_terry.hpp"
#include "diffcal/domain.hpp"
#include "diffcal/elicitation.hpp"
#include "diffcal/gateway.hpp"

namespace diffcal::analysis {

class UndefinedCorrelationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pearson correlation of average ranks. Needs equal lengths >= 3 and at least
// two distinct values per vector.
double spearman(std::span<const double> x, std::span<const double> y);
// nullopt where spearman() would throw UndefinedCorrelationError.
std::optional<double> try_spearman(std::span<const double> x, std::span<const double> y);

enum class Orientation {
  proportion_correct,  // higher = easier (absolute estimates, expected_p)
  harder_is_larger,    // BT lambda, Rasch b
};

struct ConditionEstimate {
  elicit::DesignCell cell;
  Orientation orientation = Orientation::harder_is_larger;
  std::map<std::string, double> values;       // item id -> value
  std::map<std::string, std::string> excluded;  // item id -> reason
};

// Converts to harder_is_larger (negating proportions); idempotent.
ConditionEstimate orient(const ConditionEstimate& e);

struct AlignedSeries {
  std::vector<std::string> item_ids;
  std::vector<double> estimate;   // harder is larger
  std::vector<double> criterion;  // -expected_p
};

// Items present in both, in criterion key order. Throws on empty overlap.
AlignedSeries align(const ConditionEstimate& e, const std::map<std::string, double>& expected_p);

// ---------------------------------------------------------------- estimates

// Win masses from pairwise records (failed parses skipped). Hard decisions
// count one win; soft decisions use the 1e6-scaled pseudo-counts.
bt::WinMatrix win_matrix(std::span<const elicit::JudgementRecord> records, std::span<const std::string> item_ids,
                         elicit::Decision decision);

// Absolute cells: parsed value (hard) or p_soft (soft), oriented as
// proportion correct. Pairwise cells: BT lambda. Items without a usable
// judgement are listed as excluded; if the BT fit fails every item is.
ConditionEstimate estimate_condition(const elicit::DesignCell& cell,
                                     std::span<const elicit::JudgementRecord> records,
                                     std::span<const std::string> item_ids, const bt::BTConfig& bt_config = {},
                                     std::optional<bt::BTResult>* fit = nullptr);

// ---------------------------------------------------------------- bootstrap

struct DomainData {
  Domain domain = Domain::addition;
  std::vector<std::string> item_ids;
  std::vector<double> criterion;  // harder is larger
  // condition -> aligned values (harder is larger); NaN marks an excluded item
  std::map<std::string, std::vector<double>> conditions;
};

DomainData make_domain_data(Domain domain, const std::map<std::string, double>& expected_p,
                            std::span<const ConditionEstimate> estimates);

// Mean r_s over conditions x domains (empty domains = every domain).
struct GroupSpec {
  std::string name;
  std::vector<std::string> conditions;
  std::vector<Domain> domains;
};

struct ContrastSpec {
  std::string name;
  GroupSpec a, b;  // delta = mean(a) - mean(b)
};

struct BootstrapConfig {
  int iterations = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
  // Test hook: every "resample" is the original item order.
  bool identity_resample = false;
  bool keep_draws = false;
};

struct Estimate {
  double point = std::numeric_limits<double>::quiet_NaN();
  double lower = std::numeric_limits<double>::quiet_NaN();
  double upper = std::numeric_limits<double>::quiet_NaN();
  std::size_t valid = 0;
  std::size_t degenerate = 0;  // iterations with an undefined correlation
  bool excludes_zero = false;
};

struct AnalysisResult {
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> conditions;
  std::vector<Domain> domains;
  std::vector<std::vector<double>> point_rs;  // [condition][domain]; NaN if undefined
  std::map<std::string, Estimate> groups;
  std::map<std::string, Estimate> contrasts;
  std::map<std::string, std::vector<double>> draws;  // per iteration, NaN = degenerate (keep_draws)

  double rs(const std::string& condition, Domain d) const;
};

// Each iteration b draws its own stream derive_seed(seed, b); within it every
// domain is resampled once (with replacement) and that resample is shared by
// all conditions. Intervals are the 2.5 / 97.5 type-7 percentiles of the
// non-degenerate draws.
AnalysisResult bootstrap_analysis(std::span<const DomainData> domains, std::span<const GroupSpec> groups,
                                  std::span<const ContrastSpec> contrasts, const BootstrapConfig& config);

// Standard groups and contrasts for the given models: per-condition, per-model
// and per-domain means, and the format, decision and prompting contrasts
// (average effect and per stratum).
struct AnalysisPlan {
  std::vector<GroupSpec> groups;
  std::vector<ContrastSpec> contrasts;
};
AnalysisPlan standard_plan(std::span<const std::string> models, std::span<const Domain> domains);

// ---------------------------------------------------------------- costs

enum class CostGrouping {
  cell,              // one row per design cell
  format_prompting,  // model x format x prompting, shared calls counted once
};

struct CostRow {
  std::string group;
  std::size_t judgements = 0;
  double total_time_s = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double prompt_cost = 0;
  double completion_cost = 0;
  std::size_t missing_usage = 0;  // records without usage; not included in the sums

  double cost() const { return prompt_cost + completion_cost; }
};

std::vector<CostRow> cost_report(std::span<const elicit::JudgementRecord> records,
                                 const std::map<std::string, llm::BackendProfile>& profiles,
                                 CostGrouping grouping = CostGrouping::cell);

// ---------------------------------------------------------------- report

// Three decimals without the leading zero (".673", "-.006"); "n/a" for NaN.
std::string format_r(double r);

void write_condition_table_csv(std::ostream& out, const AnalysisResult& r);
void write_group_table_csv(std::ostream& out, const AnalysisResult& r);
void write_contrast_table_csv(std::ostream& out, const AnalysisResult& r);
void write_cost_table_csv(std::ostream& out, std::span<const CostRow> rows);
// Human-readable rendering of all tables.
void write_text_report(std::ostream& out, const AnalysisResult& r, std::span<const CostRow> costs);

}  // namespace diffcal::analysis
