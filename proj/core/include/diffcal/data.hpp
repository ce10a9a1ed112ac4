#pragma once

// Response-log ingestion: filtering, sessionizing into weighted
// pseudo-persons, stratified item sampling and a synthetic log generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/domain.hpp"
#include "diffcal/psychometrics.hpp"

namespace diffcal::data {

struct ResponseRecord {
  std::string user_id;
  std::string item_id;
  int correct = 0;             // 0 or 1
  std::int64_t timestamp = 0;  // seconds since the Unix epoch
  Domain domain = Domain::addition;
  int grade = 0;

  bool operator==(const ResponseRecord&) const = default;
};

struct ItemBankEntry {
  std::string item_id;
  Domain domain = Domain::addition;
  int grade = 0;
  int time_limit_seconds = 0;
  std::string text;  // verbatim; may contain HTML fragments
  bool open_ended = true;
};

class ItemBank {
 public:
  ItemBank() = default;
  explicit ItemBank(std::vector<ItemBankEntry> entries);

  const ItemBankEntry* find(const std::string& item_id) const;
  const ItemBankEntry& at(const std::string& item_id) const;
  const std::vector<ItemBankEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<ItemBankEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------- filtering

struct FilterConfig {
  int min_item_responses = 300;  // keep items with strictly more responses
  int min_user_tasks = 5;        // keep users with strictly more distinct tasks
  int max_user_tasks = 5000;     // ... and strictly fewer
  std::map<Domain, int> domain_grades = {
      {Domain::addition, 3},       {Domain::subtraction, 4},
      {Domain::multiplication, 6}, {Domain::division, 7},
      {Domain::calculation_order, 8}, {Domain::text_problems, 5},
  };
  // Repeat the items -> users -> grade pass until nothing changes, which
  // makes the filter idempotent. A single pass otherwise.
  bool iterate_to_fixpoint = true;
};

enum class FilterStage { items, users, grade };
std::string_view to_string(FilterStage s);

class EmptyDomainError : public std::runtime_error {
 public:
  EmptyDomainError(Domain domain, FilterStage stage);
  Domain domain() const { return domain_; }
  FilterStage stage() const { return stage_; }

 private:
  Domain domain_;
  FilterStage stage_;
};

// Per domain: items with > min_item_responses responses, then users whose
// distinct task count lies strictly inside (min_user_tasks, max_user_tasks),
// then rows of the domain's designated grade. Input order is preserved.
std::vector<ResponseRecord> filter_responses(std::span<const ResponseRecord> records,
                                             const ItemBank& item_bank,
                                             const FilterConfig& config = {});

// ---------------------------------------------------------------- sessions

struct SessionRule {
  std::int64_t gap_seconds = 30 * 60;  // inactivity gap that closes a session
  int min_unique_items = 5;
};

struct SessionizedResponses {
  irt::WeightedResponseMatrix matrix;
  std::vector<std::string> person_users;  // originating user per pseudo-person
  std::size_t users_excluded = 0;          // users left with no session
  std::size_t sessions_dropped = 0;
};

// Pseudo-person ids are "<user>#<n>" with n counting surviving sessions from 1.
// Items are indexed in lexicographic id order; persons by user id then time.
SessionizedResponses sessionize(std::span<const ResponseRecord> records,
                                const SessionRule& rule = {});

// ---------------------------------------------------------------- sampling

struct SampledItem {
  std::string item_id;
  int stratum = 0;  // 1 = lowest expected proportion correct (hardest)
  double expected_p = 0;
};

struct StratifiedSample {
  Domain domain = Domain::addition;
  int n_per_stratum = 15;
  std::uint64_t seed = 0;
  std::array<double, 3> borders{};  // 25th, 50th, 75th percentiles of expected_p
  std::vector<SampledItem> items;   // ordered by stratum, then draw order
  // anchors[0] from the easiest stratum (4), anchors[1] from the hardest (1).
  std::array<SampledItem, 2> anchors;

  std::vector<std::string> item_ids() const;
};

class InsufficientStratumError : public std::runtime_error {
 public:
  InsufficientStratumError(int stratum, std::size_t available, std::size_t required);
  int stratum() const { return stratum_; }
  std::size_t available() const { return available_; }

 private:
  int stratum_;
  std::size_t available_;
};

// Strata borders are type-7 percentiles of expected_p over every fitted item;
// values equal to a border fall in the lower stratum. Only open-ended items of
// `domain` present in the bank are drawn.
StratifiedSample stratified_sample(const irt::RaschFit& fit, const ItemBank& item_bank,
                                   Domain domain, int n_per_stratum, std::uint64_t seed);

// ---------------------------------------------------------------- synthetic

struct SyntheticSpec {
  int n_items = 60;
  int n_users = 1000;
  double difficulty_lo = -2.0;
  double difficulty_hi = 2.0;
  int sessions_per_user = 1;
  int items_per_session = 0;  // 0 = every item in every session
  double ability_sd = 1.0;
  // Added to every difficulty and every ability; leaves responses unchanged.
  double location_shift = 0.0;
  std::uint64_t seed = 1;
  Domain domain = Domain::addition;
  int grade = 0;  // 0 = default grade of the domain
  std::int64_t start_time = 1504224000;  // 2017-09-01T00:00:00Z
  std::string id_prefix;
};

struct SyntheticTruth {
  std::vector<std::string> item_ids;
  std::vector<double> difficulties;
  std::vector<std::string> user_ids;
  std::vector<double> abilities;
};

struct SyntheticLogs {
  std::vector<ResponseRecord> records;
  SyntheticTruth truth;
};

SyntheticLogs generate_synthetic_logs(const SyntheticSpec& spec);

// Arithmetic-expression item texts for the generated items. Every item is
// open-ended unless `closed_every` > 0, in which case every closed_every-th
// item is flagged closed.
ItemBank generate_synthetic_item_bank(const SyntheticTruth& truth, Domain domain, int grade,
                                      int time_limit_seconds = 20, int closed_every = 0);

// ---------------------------------------------------------------- file IO

// Response log CSV: user_id,item_id,correct,timestamp,domain,grade.
// Timestamps are epoch seconds or ISO 8601 "YYYY-MM-DD[T ]HH:MM:SS[Z]".
std::vector<ResponseRecord> read_response_log(const std::filesystem::path& path);
void write_response_log(const std::filesystem::path& path, std::span<const ResponseRecord> records);

// Item bank CSV: item_id,domain,grade,time_limit_seconds,open_ended,text.
ItemBank read_item_bank(const std::filesystem::path& path);
void write_item_bank(const std::filesystem::path& path, const ItemBank& bank);

// Response-matrix exchange CSV, long format: person_id,user_id,weight,item_id,correct.
void write_response_matrix(const std::filesystem::path& path, const SessionizedResponses& data);
SessionizedResponses read_response_matrix(const std::filesystem::path& path);

// Fit table CSV (item_id,b_logit,expected_p) plus a JSON metadata record.
void write_rasch_fit(const std::filesystem::path& table_path,
                     const std::filesystem::path& metadata_path, const irt::RaschFit& fit);
irt::RaschFit read_rasch_fit(const std::filesystem::path& table_path,
                             const std::filesystem::path& metadata_path);

// Sample manifest (JSON); serialization is deterministic.
std::string serialize_sample(const StratifiedSample& sample);
StratifiedSample parse_sample(const std::string& json_text);

std::int64_t parse_timestamp(std::string_view text);

}  // namespace diffcal::data
