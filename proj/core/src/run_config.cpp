#include <fstream>
#include <set>
#include <sstream>

#include "diffcal/pipeline.hpp"

namespace diffcal::pipeline {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads keys from one JSON object and rejects whatever is left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) throw ConfigError(where(key) + " is required");
    return convert<T>(key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where(key) + " is required");
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown configuration key " + where(k));
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "(root)" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void apply_override(json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + spec + "' is not key=value");
  const std::string key = spec.substr(0, eq), text = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' does not address an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

llm::BackendProfile preset(const std::string& name) {
  if (name == "gpt-4o") return llm::gpt4o_profile();
  if (name == "deepseek-chat") return llm::deepseek_chat_profile();
  if (name == "qwen") return llm::qwen_profile();
  return llm::BackendProfile{name, name, "", "", 10, true, 0, 0};
}

template <class E, class F>
std::vector<E> enum_list(Section& s, const std::string& key, std::vector<E> fallback, F parse) {
  if (!s.has(key)) {
    s.get<json>(key, json());
    return fallback;
  }
  std::vector<E> out;
  for (const auto& v : s.require<std::vector<std::string>>(key)) {
    try {
      out.push_back(parse(v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(s.where(key) + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError(s.where(key) + " must not be empty");
  return out;
}

ordered_json canonical_json(const RunConfig& c) {
  ordered_json j;
  j["paths"] = {{"logs", c.logs.string()},
                {"item_bank", c.item_bank.string()},
                {"cache", c.cache.string()},
                {"output_dir", c.output_dir.string()}};
  ordered_json doms = ordered_json::object();
  for (const auto& [d, g] : c.domains) doms[std::string(to_string(d))] = g;
  j["domains"] = doms;
  j["filter"] = {{"min_item_responses", c.filter.min_item_responses},
                 {"min_user_tasks", c.filter.min_user_tasks},
                 {"max_user_tasks", c.filter.max_user_tasks},
                 {"iterate_to_fixpoint", c.filter.iterate_to_fixpoint}};
  j["sessions"] = {{"gap_seconds", c.sessions.gap_seconds}, {"min_unique_items", c.sessions.min_unique_items}};
  j["calibration"] = {{"quadrature_nodes", c.rasch.quadrature_nodes},
                      {"tol", c.rasch.tol},
                      {"max_iter", c.rasch.max_iter}};
  j["sampling"] = {{"seed", c.sampling_seed}, {"pair_seed", c.pair_seed}, {"n_per_stratum", c.n_per_stratum}};
  auto names = [](const auto& v) {
    ordered_json a = ordered_json::array();
    for (auto x : v) a.push_back(std::string(elicit::to_string(x)));
    return a;
  };
  j["design"] = {{"models", c.models},
                 {"formats", names(c.formats)},
                 {"decisions", names(c.decisions)},
                 {"promptings", names(c.promptings)}};
  ordered_json backends = ordered_json::array();
  for (const auto& b : c.backends) {
    ordered_json bj = {{"name", b.profile.name},
                       {"kind", b.kind},
                       {"model", b.profile.model},
                       {"base_url", b.profile.base_url},
                       {"auth_env_var", b.profile.auth_env_var},
                       {"top_k_limit", b.profile.top_k_limit},
                       {"supports_logprobs", b.profile.supports_logprobs},
                       {"price_per_1k_prompt_tokens", b.profile.price_per_1k_prompt_tokens},
                       {"price_per_1k_completion_tokens", b.profile.price_per_1k_completion_tokens},
                       {"rate_limit_per_second", b.rate_limit_per_second},
                       {"timeout_seconds", b.timeout_seconds}};
    if (b.kind == "mock")
      bj["mock"] = {{"seed", b.mock_seed},
                    {"tau", b.mock_noise.tau},
                    {"absolute_logit_sd", b.mock_noise.absolute_logit_sd},
                    {"digit_spread", b.mock_noise.digit_spread},
                    {"ability_sd", b.mock_noise.ability_sd}};
    backends.push_back(bj);
  }
  j["backends"] = backends;
  const auto& e = c.elicitation;
  j["elicitation"] = {{"retry_max", e.retry_max},
                      {"parallelism", e.parallelism},
                      {"temperature", e.temperature},
                      {"top_logprobs", e.top_logprobs},
                      {"max_requests", e.max_requests},
                      {"case_b",
                       {{"conf_threshold", e.case_b.conf_threshold},
                        {"max_attempts", e.case_b.max_attempts},
                        {"fallback_frac", e.case_b.fallback_frac}}}};
  j["bt"] = {{"tol", c.bt.tol}, {"max_iter", c.bt.max_iter}, {"smoothing", c.bt.smoothing}};
  j["analysis"] = {{"iterations", c.bootstrap_iterations}, {"seed", c.bootstrap_seed}, {"threads", c.bootstrap_threads}};
  return j;
}

}  // namespace

const BackendConfig& RunConfig::backend(const std::string& name) const {
  for (const auto& b : backends)
    if (b.profile.name == name) return b;
  throw ConfigError("no backend named '" + name + "'");
}

RunConfig parse_config(json j, const std::filesystem::path& base_dir) {
  RunConfig c;
  Section root(j, "");

  auto paths = root.child("paths");
  c.output_dir = resolve(base_dir, paths.require<std::string>("output_dir"));
  c.logs = resolve(base_dir, paths.require<std::string>("logs"));
  c.item_bank = resolve(base_dir, paths.require<std::string>("item_bank"));
  const auto cache = paths.get<std::string>("cache", "");
  c.cache = cache.empty() ? c.output_dir / "cache" / "responses.jsonl" : resolve(base_dir, cache);
  paths.finish();
  for (const auto& [label, p] : {std::pair{"paths.logs", c.logs}, std::pair{"paths.item_bank", c.item_bank}})
    if (!std::filesystem::exists(p)) throw ConfigError(std::string(label) + ": " + p.string() + " does not exist");

  const auto& doms = root.raw("domains");
  if (!doms.is_object() || doms.empty()) throw ConfigError("domains must be a non-empty object");
  for (const auto& [name, grade] : doms.items()) {
    Domain d;
    try {
      d = parse_domain(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("domains: ") + e.what());
    }
    if (grade.is_null()) {
      c.domains[d] = default_grade(d);
    } else if (grade.is_number_integer()) {
      c.domains[d] = grade.get<int>();
    } else {
      throw ConfigError("domains." + name + " must be a grade number");
    }
  }
  c.filter.domain_grades = c.domains;

  auto filter = root.child("filter");
  c.filter.min_item_responses = filter.get("min_item_responses", c.filter.min_item_responses);
  c.filter.min_user_tasks = filter.get("min_user_tasks", c.filter.min_user_tasks);
  c.filter.max_user_tasks = filter.get("max_user_tasks", c.filter.max_user_tasks);
  c.filter.iterate_to_fixpoint = filter.get("iterate_to_fixpoint", c.filter.iterate_to_fixpoint);
  filter.finish();

  auto sessions = root.child("sessions");
  c.sessions.gap_seconds = sessions.get("gap_seconds", c.sessions.gap_seconds);
  c.sessions.min_unique_items = sessions.get("min_unique_items", c.sessions.min_unique_items);
  sessions.finish();

  auto cal = root.child("calibration");
  c.rasch.quadrature_nodes = cal.get("quadrature_nodes", c.rasch.quadrature_nodes);
  c.rasch.tol = cal.get("tol", c.rasch.tol);
  c.rasch.max_iter = cal.get("max_iter", c.rasch.max_iter);
  cal.finish();

  auto sampling = root.child("sampling");
  c.sampling_seed = sampling.require<std::uint64_t>("seed");
  c.pair_seed = sampling.require<std::uint64_t>("pair_seed");
  c.n_per_stratum = sampling.get("n_per_stratum", c.n_per_stratum);
  if (c.n_per_stratum < 1) throw ConfigError("sampling.n_per_stratum must be positive");
  sampling.finish();

  auto backends = root.raw("backends");
  if (!backends.is_array() || backends.empty()) throw ConfigError("backends must be a non-empty array");
  for (std::size_t i = 0; i < backends.size(); ++i) {
    Section b(backends[i], "backends[" + std::to_string(i) + "]");
    BackendConfig bc;
    const auto name = b.require<std::string>("name");
    bc.kind = b.get<std::string>("kind", "openai");
    if (bc.kind != "openai" && bc.kind != "mock") throw ConfigError(b.where("kind") + " must be openai or mock");
    bc.profile = bc.kind == "mock" ? llm::mock_profile(name) : preset(name);
    auto& p = bc.profile;
    p.model = b.get("model", p.model);
    p.base_url = b.get("base_url", p.base_url);
    p.auth_env_var = b.get("auth_env_var", p.auth_env_var);
    p.top_k_limit = b.get("top_k_limit", p.top_k_limit);
    p.supports_logprobs = b.get("supports_logprobs", p.supports_logprobs);
    p.price_per_1k_prompt_tokens = b.get("price_per_1k_prompt_tokens", p.price_per_1k_prompt_tokens);
    p.price_per_1k_completion_tokens = b.get("price_per_1k_completion_tokens", p.price_per_1k_completion_tokens);
    bc.rate_limit_per_second = b.get("rate_limit_per_second", 0);
    bc.timeout_seconds = b.get("timeout_seconds", 60);
    if (bc.kind == "mock") {
      auto m = b.child("mock");
      bc.mock_seed = m.require<std::uint64_t>("seed");
      bc.mock_noise.tau = m.get("tau", bc.mock_noise.tau);
      bc.mock_noise.absolute_logit_sd = m.get("absolute_logit_sd", bc.mock_noise.absolute_logit_sd);
      bc.mock_noise.digit_spread = m.get("digit_spread", bc.mock_noise.digit_spread);
      bc.mock_noise.ability_sd = m.get("ability_sd", bc.mock_noise.ability_sd);
      m.finish();
    } else if (b.has("mock")) {
      throw ConfigError(b.where("mock") + " is only valid for kind \"mock\"");
    } else if (p.base_url.empty()) {
      throw ConfigError(b.where("base_url") + " is required for backend '" + name + "'");
    }
    b.finish();
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (const auto& other : c.backends)
      if (other.profile.name == name) throw ConfigError("backend '" + name + "' defined twice");
    c.backends.push_back(bc);
  }

  auto design = root.child("design");
  c.models = design.require<std::vector<std::string>>("models");
  if (c.models.empty()) throw ConfigError("design.models must not be empty");
  for (const auto& m : c.models) {
    if (m.find_first_of("/|") != std::string::npos) throw ConfigError("model name '" + m + "' may not contain / or |");
    c.backend(m);
  }
  c.formats = enum_list(design, "formats", c.formats, elicit::parse_format);
  c.decisions = enum_list(design, "decisions", c.decisions, elicit::parse_decision);
  c.promptings = enum_list(design, "promptings", c.promptings, elicit::parse_prompting);
  design.finish();

  auto el = root.child("elicitation");
  auto& e = c.elicitation;
  e.retry_max = el.get("retry_max", e.retry_max);
  e.parallelism = el.get("parallelism", e.parallelism);
  e.temperature = el.get("temperature", e.temperature);
  e.top_logprobs = el.get("top_logprobs", e.top_logprobs);
  e.max_requests = el.get("max_requests", e.max_requests);
  auto cb = el.child("case_b");
  e.case_b.conf_threshold = cb.get("conf_threshold", e.case_b.conf_threshold);
  e.case_b.max_attempts = cb.get("max_attempts", e.case_b.max_attempts);
  e.case_b.fallback_frac = cb.get("fallback_frac", e.case_b.fallback_frac);
  cb.finish();
  el.finish();
  if (e.retry_max < 0 || e.parallelism < 1 || e.case_b.max_attempts < 1)
    throw ConfigError("elicitation: retry_max >= 0, parallelism >= 1 and case_b.max_attempts >= 1 required");

  auto btc = root.child("bt");
  c.bt.tol = btc.get("tol", c.bt.tol);
  c.bt.max_iter = btc.get("max_iter", c.bt.max_iter);
  c.bt.smoothing = btc.get("smoothing", c.bt.smoothing);
  btc.finish();
  if (c.bt.smoothing < 0) throw ConfigError("bt.smoothing must be non-negative");

  auto an = root.child("analysis");
  c.bootstrap_iterations = an.get("iterations", c.bootstrap_iterations);
  c.bootstrap_seed = an.require<std::uint64_t>("seed");
  c.bootstrap_threads = an.get("threads", c.bootstrap_threads);
  an.finish();
  if (c.bootstrap_iterations < 1) throw ConfigError("analysis.iterations must be positive");

  root.finish();
  c.canonical = canonical_json(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto c = parse_config(std::move(j), std::filesystem::absolute(path).parent_path());
  c.config_path = path;
  return c;
}

bool glob_match(std::string_view p, std::string_view t) {
  std::size_t pi = 0, ti = 0, star = std::string_view::npos, mark = 0;
  while (ti < t.size()) {
    if (pi < p.size() && (p[pi] == '?' || p[pi] == t[ti])) {
      ++pi;
      ++ti;
    } else if (pi < p.size() && p[pi] == '*') {
      star = pi++;
      mark = ti;
    } else if (star != std::string_view::npos) {
      pi = star + 1;
      ti = ++mark;
    } else {
      return false;
    }
  }
  while (pi < p.size() && p[pi] == '*') ++pi;
  return pi == p.size();
}

std::vector<elicit::DesignCell> selected_cells(const RunConfig& config) {
  std::vector<elicit::DesignCell> out;
  std::vector<Domain> domains;
  for (const auto& [d, g] : config.domains) domains.push_back(d);
  for (const auto& cell : elicit::full_design(config.models, domains)) {
    auto has = [](const auto& v, auto x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    if (!has(config.formats, cell.format) || !has(config.decisions, cell.decision) ||
        !has(config.promptings, cell.prompting))
      continue;
    if (!config.only.empty() &&
        std::none_of(config.only.begin(), config.only.end(), [&](const auto& g) { return glob_match(g, cell.id()); }))
      continue;
    out.push_back(cell);
  }
  return out;
}

}  // namespace diffcal::pipeline
