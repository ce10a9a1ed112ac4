#pragma once

// Staged pipeline behind the command-line tool: run configuration, run
// manifest with artifact digests, and the ingest -> calibrate -> sample ->
// elicit -> fit -> analyze -> report stages.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/analysis.hpp"
#include "diffcal/bradley_terry.hpp"
#include "diffcal/data.hpp"
#include "diffcal/elicitation.hpp"
#include "diffcal/gateway.hpp"
#include "diffcal/psychometrics.hpp"

namespace diffcal::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Invalid or incomplete configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A stage's inputs are missing or stale (exit code 3).
class StagePreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackendConfig {
  llm::BackendProfile profile;
  std::string kind = "openai";  // "openai" or "mock"
  int rate_limit_per_second = 0;  // 0 = unlimited
  int timeout_seconds = 60;
  llm::MockNoise mock_noise;
  std::uint64_t mock_seed = 0;
};

struct RunConfig {
  std::filesystem::path config_path;
  std::filesystem::path logs, item_bank, cache, output_dir;
  std::map<Domain, int> domains;  // analysed domains and their grades
  data::FilterConfig filter;
  data::SessionRule sessions;
  irt::RaschConfig rasch;
  int n_per_stratum = 15;
  std::uint64_t sampling_seed = 0;
  std::uint64_t pair_seed = 0;
  std::vector<std::string> models;
  std::vector<elicit::Format> formats{elicit::Format::absolute, elicit::Format::pairwise};
  std::vector<elicit::Decision> decisions{elicit::Decision::hard, elicit::Decision::soft};
  std::vector<elicit::Prompting> promptings{elicit::Prompting::zero_shot, elicit::Prompting::few_shot};
  std::vector<BackendConfig> backends;
  elicit::ElicitConfig elicitation;
  bt::BTConfig bt;
  int bootstrap_iterations = 10000;
  std::uint64_t bootstrap_seed = 0;
  int bootstrap_threads = 1;
  std::vector<std::string> only;  // cell-id glob filter (command line)

  // Canonical JSON of every setting above except `only`; its digest
  // identifies the configuration in the manifest.
  nlohmann::ordered_json canonical;

  const BackendConfig& backend(const std::string& name) const;
};

// Loads a JSON run configuration. Relative paths are resolved against the
// config file's directory. `overrides` are "dotted.key=value" strings applied
// before validation; values are parsed as JSON when possible, otherwise taken
// as strings. Unknown keys, missing seeds and unresolvable input paths are
// ConfigErrors.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig parse_config(nlohmann::json j, const std::filesystem::path& base_dir);

// Shell-style glob with '*' and '?'.
bool glob_match(std::string_view pattern, std::string_view text);

// Design cells selected by the configuration and the --only filter.
std::vector<elicit::DesignCell> selected_cells(const RunConfig& config);

enum class Stage { ingest, calibrate, sample, elicit, fit, analyze, report };
inline constexpr std::array<Stage, 7> kAllStages = {Stage::ingest,  Stage::calibrate, Stage::sample, Stage::elicit,
                                                    Stage::fit,     Stage::analyze,   Stage::report};
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

// manifest.json in the output directory.
class Manifest {
 public:
  static Manifest load(const std::filesystem::path& output_dir);
  void save() const;

  nlohmann::ordered_json& json() { return j_; }
  const nlohmann::ordered_json& json() const { return j_; }

  // Stored fingerprint of a completed stage, if any.
  std::optional<std::string> fingerprint(Stage s) const;
  // Artifacts (relative path -> digest) recorded for a stage.
  std::map<std::string, std::string> artifacts(Stage s) const;
  // True when every recorded artifact of the stage exists with its digest.
  bool artifacts_intact(Stage s) const;
  void record(Stage s, const std::string& fingerprint, const std::vector<std::string>& artifact_paths,
              bool skipped);
  void mark_skipped(Stage s);
  void forget(Stage s);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  nlohmann::ordered_json j_;
};

// Exclusive advisory lock on <output_dir>/.lock for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& output_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  int fd_ = -1;
};

// Builds the backend for a profile. The default creates the OpenAI-protocol
// client or, for kind "mock", a mock judge answering from `truth`
// (item text -> Rasch difficulty).
using BackendFactory = std::function<std::unique_ptr<llm::ChatBackend>(
    const BackendConfig&, const std::map<std::string, double>& truth)>;

struct StageOptions {
  BackendFactory backend_factory;  // empty = default
  bool force = false;              // rerun even when inputs are unchanged
};

struct StageOutcome {
  Stage stage = Stage::ingest;
  bool skipped = false;
  std::string message;
};

StageOutcome run_stage(Stage s, const RunConfig& config, const StageOptions& options = {});
// Every stage in order; stops at the first failure (exception).
std::vector<StageOutcome> run_all(const RunConfig& config, const StageOptions& options = {});

// Writes a synthetic study: response log, item bank and a mock-backend run
// configuration (config.json) into `dir`.
struct SynthOptions {
  std::vector<Domain> domains{kAllDomains.begin(), kAllDomains.end()};
  int n_items = 80;
  int n_users = 400;
  std::uint64_t seed = 7;
  int bootstrap_iterations = 2000;
};
std::filesystem::path write_synthetic_study(const std::filesystem::path& dir, const SynthOptions& options = {});

// Maps an exception to the documented exit codes: 2 configuration,
// 3 stage precondition, 4 backend, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace diffcal::pipeline
