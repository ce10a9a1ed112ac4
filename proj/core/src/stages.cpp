#include <spdlog/spdlog.h>

#include <fstream>
#include <set>
#include <sstream>

#include "diffcal/csv.hpp"
#include "diffcal/digest.hpp"
#include "diffcal/pipeline.hpp"
#include "diffcal/rng.hpp"

namespace diffcal::pipeline {
namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string dname(Domain d) { return std::string(to_string(d)); }

std::vector<Domain> domains_of(const RunConfig& c) {
  std::vector<Domain> out;
  for (const auto& [d, g] : c.domains) out.push_back(d);
  return out;
}

std::string rel_matrix(Domain d) { return "ingest/matrix_" + dname(d) + ".csv"; }
std::string rel_fit_table(Domain d) { return "calibrate/fit_" + dname(d) + ".csv"; }
std::string rel_fit_meta(Domain d) { return "calibrate/fit_" + dname(d) + ".json"; }
std::string rel_sample(Domain d) { return "sample/sample_" + dname(d) + ".json"; }
std::string rel_pairs(Domain d) { return "sample/pairs_" + dname(d) + ".csv"; }
const std::string kRelLog = "elicit/judgements.jsonl";
const std::string kRelEstimates = "fit/estimates.csv";
const std::string kRelLambda = "fit/lambda.csv";
const std::string kRelAnalysis = "analyze/analysis.json";
const std::string kRelCosts = "analyze/costs.json";

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

ordered_json number_or_null(double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); }
double number_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

// ---------------------------------------------------------------- fingerprints

std::string templates_digest() {
  ordered_json j;
  for (auto t : {elicit::TemplateId::A, elicit::TemplateId::B, elicit::TemplateId::C, elicit::TemplateId::D})
    j[std::string(elicit::template_name(t))] =
        sha256_hex(std::string(elicit::template_system(t)) + '\0' + std::string(elicit::template_user(t)));
  return sha256_hex(j.dump());
}

ordered_json artifacts_json(const Manifest& m, Stage s) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m.artifacts(s)) j[k] = v;
  return j;
}

std::vector<std::string> cell_ids(const RunConfig& c) {
  std::vector<std::string> ids;
  for (const auto& cell : selected_cells(c)) ids.push_back(cell.id());
  return ids;
}

std::string fingerprint(Stage s, const RunConfig& c, const Manifest& m) {
  const auto& cfg = c.canonical;
  ordered_json j;
  j["stage"] = std::string(to_string(s));
  j["tool_version"] = std::string(kToolVersion);
  switch (s) {
    case Stage::ingest:
      j["config"] = {cfg["domains"], cfg["filter"], cfg["sessions"]};
      j["inputs"] = {sha256_file(c.logs), sha256_file(c.item_bank)};
      break;
    case Stage::calibrate:
      j["config"] = cfg["calibration"];
      j["upstream"] = artifacts_json(m, Stage::ingest);
      break;
    case Stage::sample:
      j["config"] = cfg["sampling"];
      j["inputs"] = sha256_file(c.item_bank);
      j["upstream"] = artifacts_json(m, Stage::calibrate);
      break;
    case Stage::elicit:
    {
      // Cell selection is tracked per cell, not in the fingerprint. Budget and
      // pacing do not change any record, so a resumed run may alter them.
      auto el = cfg["elicitation"];
      el.erase("max_requests");
      el.erase("parallelism");
      auto backends = cfg["backends"];
      for (auto& b : backends) {
        b.erase("rate_limit_per_second");
        b.erase("timeout_seconds");
      }
      j["config"] = {el, backends};
      j["templates"] = templates_digest();
      j["inputs"] = sha256_file(c.item_bank);
      j["upstream"] = {artifacts_json(m, Stage::sample), artifacts_json(m, Stage::calibrate)};
      break;
    }
    case Stage::fit:
      j["config"] = cfg["bt"];
      j["cells"] = cell_ids(c);
      j["upstream"] = {artifacts_json(m, Stage::elicit), artifacts_json(m, Stage::sample)};
      break;
    case Stage::analyze:
      j["config"] = {cfg["analysis"], cfg["backends"]};
      j["cells"] = cell_ids(c);
      j["upstream"] = {artifacts_json(m, Stage::fit), artifacts_json(m, Stage::sample),
                       artifacts_json(m, Stage::elicit)};
      break;
    case Stage::report:
      j["upstream"] = artifacts_json(m, Stage::analyze);
      break;
  }
  return sha256_hex(j.dump());
}

std::vector<std::string> completed_cells(const Manifest& m) {
  const auto& st = m.json()["stages"];
  if (!st.contains("elicit") || !st["elicit"].contains("cells")) return {};
  return st["elicit"]["cells"].get<std::vector<std::string>>();
}

void require_stage(Stage p, const RunConfig& c, const Manifest& m, Stage requester) {
  const auto name = std::string(to_string(p));
  const auto stored = m.fingerprint(p);
  if (!stored)
    throw StagePreconditionError("stage '" + std::string(to_string(requester)) + "' needs the outputs of '" + name +
                                 "'; run `diffcal " + name + "` first");
  if (!m.artifacts_intact(p))
    throw StagePreconditionError("outputs of stage '" + name + "' are missing or were modified; rerun `diffcal " +
                                 name + "`");
  if (*stored != fingerprint(p, c, m))
    throw StagePreconditionError("outputs of stage '" + name +
                                 "' are stale for the current configuration or inputs; rerun `diffcal " + name + "`");
  if (p == Stage::elicit) {
    const auto done = completed_cells(m);
    for (const auto& id : cell_ids(c))
      if (std::find(done.begin(), done.end(), id) == done.end())
        throw StagePreconditionError("cell " + id + " has not been elicited completely; rerun `diffcal elicit`");
  }
}

void require_chain(Stage s, const RunConfig& c, const Manifest& m) {
  // Every upstream stage, nearest first, so the message names the closest
  // stage to rerun.
  for (int k = static_cast<int>(s) - 1; k >= 0; --k) require_stage(static_cast<Stage>(k), c, m, s);
}

bool up_to_date(Stage s, const RunConfig& c, const Manifest& m) {
  const auto stored = m.fingerprint(s);
  if (!stored || *stored != fingerprint(s, c, m) || !m.artifacts_intact(s)) return false;
  if (s == Stage::elicit) {
    const auto done = completed_cells(m);
    for (const auto& id : cell_ids(c))
      if (std::find(done.begin(), done.end(), id) == done.end()) return false;
  }
  return true;
}

// ---------------------------------------------------------------- loaders

data::StratifiedSample load_sample(const Manifest& m, Domain d) {
  return data::parse_sample(read_text(m.dir() / rel_sample(d)));
}

elicit::PairSchedule load_pairs(const Manifest& m, Domain d, std::uint64_t seed) {
  elicit::PairSchedule s;
  s.seed = seed;
  const auto rows = csv::read_file(m.dir() / rel_pairs(d));
  if (rows.empty()) throw std::runtime_error("empty pair schedule");
  const csv::Header h(rows.front(), {"first", "second"});
  for (std::size_t i = 1; i < rows.size(); ++i) s.pairs.emplace_back(rows[i][h["first"]], rows[i][h["second"]]);
  return s;
}

std::map<std::string, double> mock_truth(const RunConfig& c, const Manifest& m, const data::ItemBank& bank) {
  std::map<std::string, double> truth;
  for (auto d : domains_of(c)) {
    const auto fit = data::read_rasch_fit(m.dir() / rel_fit_table(d), m.dir() / rel_fit_meta(d));
    for (std::size_t i = 0; i < fit.item_ids.size(); ++i) {
      const auto* e = bank.find(fit.item_ids[i]);
      if (!e) continue;
      if (!truth.emplace(e->text, fit.difficulties[i]).second)
        spdlog::warn("mock judge: item text of {} is not unique; the first difficulty is used", fit.item_ids[i]);
    }
  }
  return truth;
}

std::unique_ptr<llm::ChatBackend> default_backend(const BackendConfig& b, const std::map<std::string, double>& truth) {
  if (b.kind == "mock") return std::make_unique<llm::MockJudgeBackend>(b.profile, truth, b.mock_noise, b.mock_seed);
  return std::make_unique<llm::OpenAICompatibleClient>(b.profile,
                                                       llm::make_http_transport(std::chrono::seconds(b.timeout_seconds)));
}

// ---------------------------------------------------------------- stages

std::vector<std::string> run_ingest(const RunConfig& c, const Manifest& m) {
  auto records = data::read_response_log(c.logs);
  const auto bank = data::read_item_bank(c.item_bank);
  const auto input_rows = records.size();
  std::erase_if(records, [&](const data::ResponseRecord& r) { return !c.domains.count(r.domain); });
  if (records.empty()) throw ConfigError("the response log has no rows for the configured domains");
  const auto filtered = data::filter_responses(records, bank, c.filter);
  std::vector<std::string> arts{"ingest/responses.csv"};
  data::write_response_log(m.dir() / arts[0], filtered);
  ordered_json summary;
  summary["input_rows"] = input_rows;
  summary["domain_rows"] = records.size();
  summary["filtered_rows"] = filtered.size();
  for (auto d : domains_of(c)) {
    std::vector<data::ResponseRecord> mine;
    for (const auto& r : filtered)
      if (r.domain == d) mine.push_back(r);
    const auto s = data::sessionize(mine, c.sessions);
    data::write_response_matrix(m.dir() / rel_matrix(d), s);
    arts.push_back(rel_matrix(d));
    summary["domains"][dname(d)] = {{"rows", mine.size()},
                                    {"persons", s.matrix.persons.size()},
                                    {"items", s.matrix.items.size()},
                                    {"users_excluded", s.users_excluded},
                                    {"sessions_dropped", s.sessions_dropped}};
  }
  write_text(m.dir() / "ingest/summary.json", summary.dump(2) + "\n");
  arts.push_back("ingest/summary.json");
  return arts;
}

std::vector<std::string> run_calibrate(const RunConfig& c, const Manifest& m) {
  std::vector<std::string> arts;
  for (auto d : domains_of(c)) {
    const auto s = data::read_response_matrix(m.dir() / rel_matrix(d));
    const auto fit = irt::rasch_em_fit(s.matrix, c.rasch);
    if (!fit.converged) spdlog::warn("calibration of {} stopped after {} iterations", dname(d), fit.iterations);
    fs::create_directories(m.dir() / "calibrate");
    data::write_rasch_fit(m.dir() / rel_fit_table(d), m.dir() / rel_fit_meta(d), fit);
    arts.push_back(rel_fit_table(d));
    arts.push_back(rel_fit_meta(d));
  }
  return arts;
}

std::vector<std::string> run_sample(const RunConfig& c, const Manifest& m) {
  const auto bank = data::read_item_bank(c.item_bank);
  std::vector<std::string> arts;
  for (auto d : domains_of(c)) {
    const auto fit = data::read_rasch_fit(m.dir() / rel_fit_table(d), m.dir() / rel_fit_meta(d));
    const auto stream = static_cast<std::uint64_t>(d);
    const auto sample = data::stratified_sample(fit, bank, d, c.n_per_stratum, derive_seed(c.sampling_seed, stream));
    write_text(m.dir() / rel_sample(d), data::serialize_sample(sample));
    const auto sched = elicit::schedule_pairs(sample, derive_seed(c.pair_seed, stream));
    std::ostringstream out;
    csv::write_row(out, {"first", "second"});
    for (const auto& [a, b] : sched.pairs) csv::write_row(out, {a, b});
    write_text(m.dir() / rel_pairs(d), out.str());
    arts.push_back(rel_sample(d));
    arts.push_back(rel_pairs(d));
  }
  return arts;
}

struct BackendStack {
  std::unique_ptr<llm::ChatBackend> base;
  std::unique_ptr<llm::RateLimiter> limiter;
  std::unique_ptr<llm::RateLimitedBackend> limited;
  std::unique_ptr<llm::CachedBackend> cached;
};

void run_elicit(const RunConfig& c, Manifest& m, const StageOptions& opt) {
  const auto fp = fingerprint(Stage::elicit, c, m);
  const auto log_path = m.dir() / kRelLog;
  std::vector<std::string> done;
  if (const auto stored = m.fingerprint(Stage::elicit); stored && *stored != fp) {
    if (fs::exists(log_path)) {
      const auto aside = m.dir() / ("elicit/judgements." + stored->substr(0, 12) + ".jsonl");
      spdlog::warn("elicitation inputs changed; previous judgement log moved to {}", aside.string());
      fs::rename(log_path, aside);
    }
    m.forget(Stage::elicit);
  } else if (stored) {
    done = completed_cells(m);
  }

  const auto bank = data::read_item_bank(c.item_bank);
  const auto truth = mock_truth(c, m, bank);
  llm::ResponseCache cache(c.cache);
  llm::SteadyClock clock;
  std::map<std::string, BackendStack> stacks;
  for (const auto& model : c.models) {
    const auto& bc = c.backend(model);
    BackendStack s;
    s.base = opt.backend_factory ? opt.backend_factory(bc, truth) : default_backend(bc, truth);
    llm::ChatBackend* inner = s.base.get();
    if (bc.rate_limit_per_second > 0) {
      s.limiter = std::make_unique<llm::RateLimiter>(bc.rate_limit_per_second, clock);
      s.limited = std::make_unique<llm::RateLimitedBackend>(*inner, *s.limiter);
      inner = s.limited.get();
    }
    s.cached = std::make_unique<llm::CachedBackend>(*inner, cache);
    stacks[model] = std::move(s);
  }

  elicit::JudgementLog log(log_path);
  std::map<Domain, data::StratifiedSample> samples;
  std::map<Domain, elicit::PairSchedule> schedules;
  for (auto d : domains_of(c)) {
    samples[d] = load_sample(m, d);
    schedules[d] = load_pairs(m, d, derive_seed(c.pair_seed, static_cast<std::uint64_t>(d)));
  }

  auto save = [&]() {
    m.record(Stage::elicit, fp, {kRelLog}, false);
    m.json()["stages"]["elicit"]["cells"] = done;
    m.save();
  };
  for (const auto& cell : selected_cells(c)) {
    elicit::CellInputs in{&bank, &samples.at(cell.domain), &schedules.at(cell.domain), c.domains.at(cell.domain)};
    try {
      const auto recs = elicit::run_cell(cell, in, *stacks.at(cell.model).cached, c.elicitation, log);
      spdlog::info("elicited {} ({} judgements)", cell.id(), recs.size());
    } catch (const elicit::CampaignInterrupted&) {
      save();
      throw;
    }
    if (std::find(done.begin(), done.end(), cell.id()) == done.end()) done.push_back(cell.id());
  }
  std::sort(done.begin(), done.end());
  save();
}

std::vector<std::string> run_fit(const RunConfig& c, const Manifest& m) {
  const auto records = elicit::read_judgement_log(m.dir() / kRelLog);
  std::ostringstream est, lam;
  csv::write_row(est, {"cell", "item_id", "value", "orientation", "excluded"});
  csv::write_row(lam, {"cell", "item_id", "lambda", "rank"});
  std::map<Domain, data::StratifiedSample> samples;
  for (auto d : domains_of(c)) samples[d] = load_sample(m, d);
  for (const auto& cell : selected_cells(c)) {
    std::vector<elicit::JudgementRecord> mine;
    for (const auto& r : records)
      if (r.cell == cell) mine.push_back(r);
    const auto ids = samples.at(cell.domain).item_ids();
    std::optional<bt::BTResult> fit;
    const auto e = analysis::estimate_condition(cell, mine, ids, c.bt, &fit);
    const std::string orient =
        e.orientation == analysis::Orientation::proportion_correct ? "proportion_correct" : "harder_is_larger";
    for (const auto& id : ids) {
      const auto v = e.values.find(id);
      const auto x = e.excluded.find(id);
      csv::write_row(est, {cell.id(), id, v == e.values.end() ? "" : csv::format_double(v->second), orient,
                           x == e.excluded.end() ? "" : x->second});
    }
    if (fit) {
      const auto ranks = bt::ranking(*fit);
      for (std::size_t i = 0; i < ids.size(); ++i)
        csv::write_row(lam, {cell.id(), ids[i], csv::format_double(fit->lambda[i]), csv::format_double(ranks[i])});
    }
  }
  write_text(m.dir() / kRelEstimates, est.str());
  write_text(m.dir() / kRelLambda, lam.str());
  return {kRelEstimates, kRelLambda};
}

std::vector<analysis::ConditionEstimate> load_estimates(const Manifest& m) {
  const auto rows = csv::read_file(m.dir() / kRelEstimates);
  const csv::Header h(rows.at(0), {"cell", "item_id", "value", "orientation", "excluded"});
  std::map<std::string, analysis::ConditionEstimate> by_cell;
  std::vector<std::string> order;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const auto id = row[h["cell"]];
    auto [it, fresh] = by_cell.try_emplace(id);
    auto& e = it->second;
    if (fresh) {
      order.push_back(id);
      e.cell = elicit::parse_cell_id(id);
      e.orientation = row[h["orientation"]] == "proportion_correct" ? analysis::Orientation::proportion_correct
                                                                        : analysis::Orientation::harder_is_larger;
    }
    const auto item = row[h["item_id"]];
    if (const auto v = row[h["value"]]; !v.empty()) e.values[item] = csv::parse_double(v);
    if (const auto x = row[h["excluded"]]; !x.empty()) e.excluded[item] = x;
  }
  std::vector<analysis::ConditionEstimate> out;
  for (const auto& id : order) out.push_back(by_cell.at(id));
  return out;
}

ordered_json estimate_json(const analysis::Estimate& e) {
  return {{"point", number_or_null(e.point)}, {"lower", number_or_null(e.lower)},
          {"upper", number_or_null(e.upper)}, {"valid", e.valid},
          {"degenerate", e.degenerate},       {"excludes_zero", e.excludes_zero}};
}

analysis::Estimate estimate_from(const nlohmann::json& j) {
  analysis::Estimate e;
  e.point = number_from(j.at("point"));
  e.lower = number_from(j.at("lower"));
  e.upper = number_from(j.at("upper"));
  e.valid = j.at("valid").get<std::size_t>();
  e.degenerate = j.at("degenerate").get<std::size_t>();
  e.excludes_zero = j.at("excludes_zero").get<bool>();
  return e;
}

ordered_json cost_rows_json(const std::vector<analysis::CostRow>& rows) {
  ordered_json a = ordered_json::array();
  for (const auto& r : rows)
    a.push_back({{"group", r.group},
                 {"judgements", r.judgements},
                 {"total_time_s", r.total_time_s},
                 {"prompt_tokens", r.prompt_tokens},
                 {"completion_tokens", r.completion_tokens},
                 {"prompt_cost", r.prompt_cost},
                 {"completion_cost", r.completion_cost},
                 {"missing_usage", r.missing_usage}});
  return a;
}

std::vector<analysis::CostRow> cost_rows_from(const nlohmann::json& a) {
  std::vector<analysis::CostRow> out;
  for (const auto& j : a) {
    analysis::CostRow r;
    r.group = j.at("group").get<std::string>();
    r.judgements = j.at("judgements").get<std::size_t>();
    r.total_time_s = j.at("total_time_s").get<double>();
    r.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
    r.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
    r.prompt_cost = j.at("prompt_cost").get<double>();
    r.completion_cost = j.at("completion_cost").get<double>();
    r.missing_usage = j.at("missing_usage").get<std::size_t>();
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> run_analyze(const RunConfig& c, const Manifest& m) {
  const auto estimates = load_estimates(m);
  const auto domains = domains_of(c);

  // Conditions present in every analysed domain.
  std::map<std::string, std::set<Domain>> seen;
  for (const auto& e : estimates) seen[e.cell.condition()].insert(e.cell.domain);
  std::set<std::string> usable;
  for (const auto& [cond, ds] : seen) {
    if (ds.size() == domains.size())
      usable.insert(cond);
    else
      spdlog::warn("condition {} is not available in every domain; left out of the analysis", cond);
  }
  if (usable.empty()) throw StagePreconditionError("no condition has estimates in every domain; rerun `diffcal fit`");

  std::vector<analysis::DomainData> data;
  for (auto d : domains) {
    const auto sample = load_sample(m, d);
    std::map<std::string, double> expected_p;
    for (const auto& it : sample.items) expected_p[it.item_id] = it.expected_p;
    std::vector<analysis::ConditionEstimate> mine;
    for (const auto& e : estimates)
      if (e.cell.domain == d && usable.count(e.cell.condition())) mine.push_back(e);
    data.push_back(analysis::make_domain_data(d, expected_p, mine));
  }

  const auto plan = analysis::standard_plan(c.models, domains);
  auto covered = [&](const analysis::GroupSpec& g) {
    return std::all_of(g.conditions.begin(), g.conditions.end(), [&](const auto& x) { return usable.count(x) > 0; });
  };
  std::vector<analysis::GroupSpec> groups;
  for (const auto& g : plan.groups) {
    if (covered(g)) {
      groups.push_back(g);
    } else if (g.name.rfind("domain:", 0) == 0) {
      // Per-domain summaries fall back to whatever conditions are available.
      auto h = g;
      h.conditions.assign(usable.begin(), usable.end());
      groups.push_back(h);
    }
  }
  std::vector<analysis::ContrastSpec> contrasts;
  for (const auto& k : plan.contrasts)
    if (covered(k.a) && covered(k.b)) contrasts.push_back(k);

  analysis::BootstrapConfig bc;
  bc.iterations = c.bootstrap_iterations;
  bc.seed = c.bootstrap_seed;
  bc.threads = c.bootstrap_threads;
  const auto res = analysis::bootstrap_analysis(data, groups, contrasts, bc);

  ordered_json j;
  j["iterations"] = res.iterations;
  j["seed"] = res.seed;
  j["conditions"] = res.conditions;
  ordered_json doms = ordered_json::array();
  for (auto d : res.domains) doms.push_back(dname(d));
  j["domains"] = doms;
  ordered_json rs = ordered_json::array();
  for (const auto& row : res.point_rs) {
    ordered_json r = ordered_json::array();
    for (double v : row) r.push_back(number_or_null(v));
    rs.push_back(r);
  }
  j["point_rs"] = rs;
  for (const auto& [name, e] : res.groups) j["groups"][name] = estimate_json(e);
  for (const auto& [name, e] : res.contrasts) j["contrasts"][name] = estimate_json(e);
  if (!j.contains("contrasts")) j["contrasts"] = ordered_json::object();
  write_text(m.dir() / kRelAnalysis, j.dump(2) + "\n");

  const auto records = elicit::read_judgement_log(m.dir() / kRelLog);
  std::vector<elicit::JudgementRecord> selected;
  const auto ids = cell_ids(c);
  const std::set<std::string> id_set(ids.begin(), ids.end());
  for (const auto& r : records)
    if (id_set.count(r.cell.id())) selected.push_back(r);
  std::map<std::string, llm::BackendProfile> profiles;
  for (const auto& b : c.backends) profiles[b.profile.name] = b.profile;
  ordered_json costs;
  costs["by_cell"] = cost_rows_json(analysis::cost_report(selected, profiles, analysis::CostGrouping::cell));
  costs["by_format_prompting"] =
      cost_rows_json(analysis::cost_report(selected, profiles, analysis::CostGrouping::format_prompting));
  write_text(m.dir() / kRelCosts, costs.dump(2) + "\n");
  return {kRelAnalysis, kRelCosts};
}

std::vector<std::string> run_report(const Manifest& m) {
  const auto j = nlohmann::json::parse(read_text(m.dir() / kRelAnalysis));
  analysis::AnalysisResult r;
  r.iterations = j.at("iterations").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.conditions = j.at("conditions").get<std::vector<std::string>>();
  for (const auto& d : j.at("domains")) r.domains.push_back(parse_domain(d.get<std::string>()));
  for (const auto& row : j.at("point_rs")) {
    std::vector<double> v;
    for (const auto& x : row) v.push_back(number_from(x));
    r.point_rs.push_back(v);
  }
  for (const auto& [name, e] : j.at("groups").items()) r.groups[name] = estimate_from(e);
  for (const auto& [name, e] : j.at("contrasts").items()) r.contrasts[name] = estimate_from(e);
  const auto costs = nlohmann::json::parse(read_text(m.dir() / kRelCosts));
  const auto by_cell = cost_rows_from(costs.at("by_cell"));
  const auto by_prompt = cost_rows_from(costs.at("by_format_prompting"));

  std::ostringstream text, cond, grp, con, cc, cp;
  analysis::write_text_report(text, r, by_prompt);
  analysis::write_condition_table_csv(cond, r);
  analysis::write_group_table_csv(grp, r);
  analysis::write_contrast_table_csv(con, r);
  analysis::write_cost_table_csv(cc, by_cell);
  analysis::write_cost_table_csv(cp, by_prompt);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"report/report.txt", text.str()},       {"report/conditions.csv", cond.str()},
      {"report/groups.csv", grp.str()},        {"report/contrasts.csv", con.str()},
      {"report/costs_by_cell.csv", cc.str()},  {"report/costs_by_prompt.csv", cp.str()},
  };
  std::vector<std::string> arts;
  for (const auto& [rel, body] : files) {
    write_text(m.dir() / rel, body);
    arts.push_back(rel);
  }
  return arts;
}

StageOutcome run_locked(Stage s, const RunConfig& c, const StageOptions& opt) {
  auto m = Manifest::load(c.output_dir);
  m.json()["tool_version"] = std::string(kToolVersion);
  m.json()["config_digest"] = sha256_hex(c.canonical.dump());
  ordered_json tpl;
  for (auto t : {elicit::TemplateId::A, elicit::TemplateId::B, elicit::TemplateId::C, elicit::TemplateId::D}) {
    tpl[std::string(elicit::template_name(t)) + ".system"] = sha256_hex(elicit::template_system(t));
    tpl[std::string(elicit::template_name(t)) + ".user"] = sha256_hex(elicit::template_user(t));
  }
  m.json()["template_digests"] = tpl;
  ordered_json seeds = {{"sampling", c.sampling_seed}, {"pairs", c.pair_seed}, {"bootstrap", c.bootstrap_seed}};
  for (const auto& b : c.backends)
    if (b.kind == "mock") seeds["mock:" + b.profile.name] = b.mock_seed;
  m.json()["seeds"] = seeds;

  if (s != Stage::ingest) require_chain(s, c, m);
  if (!opt.force && up_to_date(s, c, m)) {
    m.mark_skipped(s);
    m.save();
    spdlog::info("{}: inputs unchanged, skipped", to_string(s));
    return {s, true, "inputs unchanged; skipped"};
  }
  if (s == Stage::elicit) {
    run_elicit(c, m, opt);
    return {s, false, "completed"};
  }
  const auto fp = fingerprint(s, c, m);
  std::vector<std::string> arts;
  switch (s) {
    case Stage::ingest: arts = run_ingest(c, m); break;
    case Stage::calibrate: arts = run_calibrate(c, m); break;
    case Stage::sample: arts = run_sample(c, m); break;
    case Stage::fit: arts = run_fit(c, m); break;
    case Stage::analyze: arts = run_analyze(c, m); break;
    case Stage::report: arts = run_report(m); break;
    case Stage::elicit: break;
  }
  m.record(s, fp, arts, false);
  m.save();
  spdlog::info("{}: completed", to_string(s));
  return {s, false, "completed"};
}

}  // namespace

StageOutcome run_stage(Stage s, const RunConfig& config, const StageOptions& options) {
  OutputLock lock(config.output_dir);
  return run_locked(s, config, options);
}

std::vector<StageOutcome> run_all(const RunConfig& config, const StageOptions& options) {
  OutputLock lock(config.output_dir);
  std::vector<StageOutcome> out;
  for (auto s : kAllStages) out.push_back(run_locked(s, config, options));
  return out;
}

std::filesystem::path write_synthetic_study(const std::filesystem::path& dir, const SynthOptions& o) {
  fs::create_directories(dir);
  std::vector<data::ResponseRecord> records;
  std::vector<data::ItemBankEntry> entries;
  ordered_json domains = ordered_json::object();
  for (auto d : o.domains) {
    data::SyntheticSpec spec;
    spec.n_items = o.n_items;
    spec.n_users = o.n_users;
    // Two sessions per user over random item subsets, as in practice logs.
    // With a complete design, items with equal sum scores would share one
    // calibrated difficulty.
    spec.sessions_per_user = 2;
    spec.items_per_session = (o.n_items * 3 + 4) / 5;
    spec.seed = derive_seed(o.seed, static_cast<std::uint64_t>(d));
    spec.domain = d;
    spec.grade = default_grade(d);
    spec.id_prefix = dname(d) + "-";
    auto logs = data::generate_synthetic_logs(spec);
    records.insert(records.end(), logs.records.begin(), logs.records.end());
    const auto bank = data::generate_synthetic_item_bank(logs.truth, d, spec.grade);
    entries.insert(entries.end(), bank.entries().begin(), bank.entries().end());
    domains[dname(d)] = spec.grade;
  }
  data::write_response_log(dir / "responses.csv", records);
  data::write_item_bank(dir / "items.csv", data::ItemBank(entries));

  ordered_json cfg;
  cfg["paths"] = {{"logs", "responses.csv"}, {"item_bank", "items.csv"}, {"output_dir", "run"}};
  cfg["domains"] = domains;
  cfg["sampling"] = {{"seed", o.seed}, {"pair_seed", o.seed + 1}, {"n_per_stratum", 15}};
  cfg["design"] = {{"models", {"mock"}}};
  cfg["backends"] = ordered_json::array(
      {{{"name", "mock"},
        {"kind", "mock"},
        {"top_k_limit", 10},
        {"mock", {{"seed", o.seed + 2}, {"tau", 0.5}, {"absolute_logit_sd", 0.5}, {"digit_spread", 0.08}}}}});
  cfg["elicitation"] = {{"parallelism", 1}};
  cfg["bt"] = {{"smoothing", 0.5}};
  cfg["analysis"] = {{"iterations", o.bootstrap_iterations}, {"seed", o.seed + 3}};
  write_text(dir / "config.json", cfg.dump(2) + "\n");
  return dir / "config.json";
}

}  // namespace diffcal::pipeline
