#include <spdlog/spdlog.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "diffcal/elicitation.hpp"

namespace diffcal::elicit {

using nlohmann::ordered_json;

std::string judgement_key(const DesignCell& cell, std::span<const std::string> item_ids) {
  std::string k = cell.model;
  for (auto part : {to_string(cell.format), to_string(cell.decision), to_string(cell.prompting), to_string(cell.domain)}) {
    k += '|';
    k += part;
  }
  for (const auto& id : item_ids) {
    k += '|';
    k += id;
  }
  return k;
}

namespace {

ordered_json candidates_json(const std::vector<tokens::TokenCandidate>& cands) {
  ordered_json a = ordered_json::array();
  for (const auto& c : cands) a.push_back({{"token", c.token}, {"logprob", c.logprob}});
  return a;
}

ordered_json usage_json(const llm::Usage& u) {
  return {{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}

llm::Usage usage_from(const nlohmann::json& j) {
  return {j.at("prompt_tokens").get<std::int64_t>(), j.at("completion_tokens").get<std::int64_t>()};
}

}  // namespace

std::string serialize_record(const JudgementRecord& r) {
  ordered_json j;
  j["key"] = r.key;
  j["cell"] = {{"model", r.cell.model},
               {"format", to_string(r.cell.format)},
               {"decision", to_string(r.cell.decision)},
               {"prompting", to_string(r.cell.prompting)},
               {"domain", to_string(r.cell.domain)}};
  j["item_ids"] = r.item_ids;
  j["raw_text"] = r.raw_text;
  j["parsed"] = r.parsed ? ordered_json(*r.parsed) : ordered_json(nullptr);
  ordered_json dc = ordered_json::array();
  for (const auto& c : r.decision_candidates) dc.push_back(candidates_json(c));
  j["decision_candidates"] = dc;
  if (r.soft_absolute) {
    const auto& s = *r.soft_absolute;
    j["soft_absolute"] = {{"p_leading_one", s.p_leading_one}, {"p_leading_zero", s.p_leading_zero},
                          {"ev_frac", s.ev_frac},             {"p_soft", s.p_soft},
                          {"case", tokens::to_string(s.soft_case)}, {"hard_fallback", s.hard_fallback}};
  } else {
    j["soft_absolute"] = nullptr;
  }
  if (r.soft_pairwise)
    j["soft_pairwise"] = {{"p_first_harder", r.soft_pairwise->p_first_harder},
                          {"source", tokens::to_string(r.soft_pairwise->source)}};
  else
    j["soft_pairwise"] = nullptr;
  j["attempts"] = r.attempts;
  j["usage"] = r.usage ? usage_json(*r.usage) : ordered_json(nullptr);
  j["latency_ms"] = r.latency_ms;
  ordered_json calls = ordered_json::array();
  for (const auto& c : r.calls) {
    ordered_json cj{{"key", c.key}, {"ordinal", c.ordinal}};
    cj.update(usage_json(c.usage));
    cj["latency_ms"] = c.latency_ms;
    calls.push_back(cj);
  }
  j["calls"] = calls;
  j["warning"] = r.warning;
  return j.dump();
}

JudgementRecord parse_record(std::string_view json_line) {
  const auto j = nlohmann::json::parse(json_line);
  JudgementRecord r;
  r.key = j.at("key").get<std::string>();
  const auto& c = j.at("cell");
  r.cell = {c.at("model").get<std::string>(), parse_format(c.at("format").get<std::string>()),
            parse_decision(c.at("decision").get<std::string>()), parse_prompting(c.at("prompting").get<std::string>()),
            parse_domain(c.at("domain").get<std::string>())};
  r.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  r.raw_text = j.at("raw_text").get<std::string>();
  if (!j.at("parsed").is_null()) r.parsed = j["parsed"].get<double>();
  for (const auto& pos : j.at("decision_candidates")) {
    std::vector<tokens::TokenCandidate> cands;
    for (const auto& cand : pos) cands.push_back({cand.at("token").get<std::string>(), cand.at("logprob").get<double>()});
    r.decision_candidates.push_back(std::move(cands));
  }
  if (const auto& s = j.at("soft_absolute"); !s.is_null()) {
    tokens::SoftAbsoluteEstimate e;
    e.p_leading_one = s.at("p_leading_one").get<double>();
    e.p_leading_zero = s.at("p_leading_zero").get<double>();
    e.ev_frac = s.at("ev_frac").get<double>();
    e.p_soft = s.at("p_soft").get<double>();
    e.soft_case = tokens::parse_soft_case(s.at("case").get<std::string>());
    e.hard_fallback = s.at("hard_fallback").get<bool>();
    r.soft_absolute = e;
  }
  if (const auto& s = j.at("soft_pairwise"); !s.is_null())
    r.soft_pairwise = tokens::PairwiseSoftRecord{s.at("p_first_harder").get<double>(),
                                                 tokens::parse_pairwise_source(s.at("source").get<std::string>())};
  r.attempts = j.at("attempts").get<int>();
  if (!j.at("usage").is_null()) r.usage = usage_from(j["usage"]);
  r.latency_ms = j.at("latency_ms").get<double>();
  for (const auto& cj : j.at("calls"))
    r.calls.push_back({cj.at("key").get<std::string>(), cj.at("ordinal").get<int>(), usage_from(cj),
                       cj.at("latency_ms").get<double>()});
  r.warning = j.at("warning").get<std::string>();
  if (r.key != judgement_key(r.cell, r.item_ids)) throw std::invalid_argument("key does not match cell and items");
  return r;
}

namespace {

struct LoadedLog {
  std::vector<JudgementRecord> records;
  std::map<std::string, std::size_t> index;
  std::size_t good_end = 0;
  std::size_t size = 0;
};

LoadedLog load_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  LoadedLog out;
  out.size = data.size();
  std::size_t pos = 0, line_no = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) {
      spdlog::warn("judgement log {}: ignoring torn trailing line {}", path.string(), line_no);
      break;
    }
    const std::string_view line(data.data() + pos, nl - pos);
    if (!line.empty()) {
      JudgementRecord r;
      try {
        r = parse_record(line);
      } catch (const std::exception& e) {
        throw LogCorruptionError("judgement log " + path.string() + " line " + std::to_string(line_no) + ": " +
                                 e.what());
      }
      if (out.index.count(r.key))
        throw LogCorruptionError("judgement log " + path.string() + " line " + std::to_string(line_no) +
                                 ": duplicate key " + r.key);
      out.index[r.key] = out.records.size();
      out.records.push_back(std::move(r));
    }
    pos = nl + 1;
    out.good_end = pos;
  }
  return out;
}

}  // namespace

JudgementLog::JudgementLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (std::filesystem::exists(path_)) {
    auto loaded = load_log(path_);
    records_ = std::move(loaded.records);
    index_ = std::move(loaded.index);
    if (loaded.good_end < loaded.size) std::filesystem::resize_file(path_, loaded.good_end);
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw std::runtime_error("cannot open judgement log " + path_.string());
}

bool JudgementLog::contains(const std::string& key) const {
  std::lock_guard lock(mu_);
  return index_.count(key) > 0;
}

void JudgementLog::append(const JudgementRecord& r) {
  const std::string line = serialize_record(r);
  std::lock_guard lock(mu_);
  if (index_.count(r.key)) throw std::logic_error("judgement " + r.key + " already logged");
  if (out_.is_open()) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write to judgement log " + path_.string() + " failed");
  }
  index_[r.key] = records_.size();
  records_.push_back(r);
}

std::vector<JudgementRecord> JudgementLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t JudgementLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<JudgementRecord> read_judgement_log(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("judgement log " + path.string() + " not found");
  return load_log(path).records;
}

}  // namespace diffcal::elicit
