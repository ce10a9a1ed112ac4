#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "diffcal/csv.hpp"
#include "diffcal/data.hpp"

namespace diffcal::data {
namespace {

using nlohmann::ordered_json;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_bool(std::string_view s) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "False") return false;
  throw std::runtime_error("not a boolean: '" + std::string(s) + "'");
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  const bool all_digits = !text.empty() && std::all_of(text.begin(), text.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || c == '-';
  }) && text.find('-', 1) == std::string_view::npos;
  if (all_digits) return csv::parse_int(text);
  // YYYY-MM-DD[T ]HH:MM:SS[Z]
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':')
    throw std::runtime_error("unparseable timestamp '" + std::string(text) + "'");
  auto num = [&](std::size_t pos, std::size_t len) { return csv::parse_int(text.substr(pos, len)); };
  const auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2), s = num(17, 2);
  const auto rest = text.substr(19);
  if (!(rest.empty() || rest == "Z"))
    throw std::runtime_error("unsupported timestamp suffix in '" + std::string(text) + "'");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60)
    throw std::runtime_error("timestamp out of range '" + std::string(text) + "'");
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 +
         mi * 60 + s;
}

std::vector<ResponseRecord> read_response_log(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty response log");
  const csv::Header h(rows[0], {"user_id", "item_id", "correct", "timestamp", "domain", "grade"});
  std::vector<ResponseRecord> out;
  out.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows[0].size())
      throw std::runtime_error(path.string() + ": wrong field count on line " + std::to_string(r + 1));
    ResponseRecord rec;
    rec.user_id = row[h["user_id"]];
    rec.item_id = row[h["item_id"]];
    rec.correct = static_cast<int>(csv::parse_int(row[h["correct"]]));
    if (rec.correct != 0 && rec.correct != 1)
      throw std::runtime_error(path.string() + ": correct must be 0/1 on line " + std::to_string(r + 1));
    rec.timestamp = parse_timestamp(row[h["timestamp"]]);
    rec.domain = parse_domain(row[h["domain"]]);
    rec.grade = static_cast<int>(csv::parse_int(row[h["grade"]]));
    out.push_back(std::move(rec));
  }
  return out;
}

void write_response_log(const std::filesystem::path& path, std::span<const ResponseRecord> records) {
  auto out = open_out(path);
  csv::write_row(out, {"user_id", "item_id", "correct", "timestamp", "domain", "grade"});
  for (const auto& r : records) {
    csv::write_row(out, {r.user_id, r.item_id, std::to_string(r.correct), std::to_string(r.timestamp),
                         std::string(to_string(r.domain)), std::to_string(r.grade)});
  }
}

ItemBank read_item_bank(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty item bank");
  const csv::Header h(rows[0], {"item_id", "domain", "grade", "time_limit_seconds", "open_ended", "text"});
  std::vector<ItemBankEntry> entries;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows[0].size())
      throw std::runtime_error(path.string() + ": wrong field count on line " + std::to_string(r + 1));
    ItemBankEntry e;
    e.item_id = row[h["item_id"]];
    e.domain = parse_domain(row[h["domain"]]);
    e.grade = static_cast<int>(csv::parse_int(row[h["grade"]]));
    e.time_limit_seconds = static_cast<int>(csv::parse_int(row[h["time_limit_seconds"]]));
    e.open_ended = parse_bool(row[h["open_ended"]]);
    e.text = row[h["text"]];
    entries.push_back(std::move(e));
  }
  return ItemBank(std::move(entries));
}

void write_item_bank(const std::filesystem::path& path, const ItemBank& bank) {
  auto out = open_out(path);
  csv::write_row(out, {"item_id", "domain", "grade", "time_limit_seconds", "open_ended", "text"});
  for (const auto& e : bank.entries()) {
    csv::write_row(out, {e.item_id, std::string(to_string(e.domain)), std::to_string(e.grade),
                         std::to_string(e.time_limit_seconds), e.open_ended ? "1" : "0", e.text});
  }
}

void write_response_matrix(const std::filesystem::path& path, const SessionizedResponses& data) {
  const auto& m = data.matrix;
  m.validate();
  auto out = open_out(path);
  csv::write_row(out, {"person_id", "user_id", "weight", "item_id", "correct"});
  for (std::size_t p = 0; p < m.num_persons(); ++p) {
    const std::string user = p < data.person_users.size() ? data.person_users[p] : m.persons[p];
    const std::string w = csv::format_double(m.weights[p]);
    for (const auto& r : m.responses[p]) {
      csv::write_row(out, {m.persons[p], user, w, m.items[r.item], std::to_string(r.correct)});
    }
  }
}

SessionizedResponses read_response_matrix(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty response matrix");
  const csv::Header h(rows[0], {"person_id", "user_id", "weight", "item_id", "correct"});
  SessionizedResponses out;
  auto& m = out.matrix;
  std::map<std::string, std::uint32_t> items;
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() == rows[0].size()) items.emplace(rows[r][h["item_id"]], 0);
  for (auto& [id, idx] : items) {
    idx = static_cast<std::uint32_t>(m.items.size());
    m.items.push_back(id);
  }
  std::map<std::string, std::size_t> persons;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows[0].size())
      throw std::runtime_error(path.string() + ": wrong field count on line " + std::to_string(r + 1));
    const auto& pid = row[h["person_id"]];
    auto [it, inserted] = persons.emplace(pid, m.persons.size());
    if (inserted) {
      m.persons.push_back(pid);
      m.weights.push_back(csv::parse_double(row[h["weight"]]));
      m.responses.emplace_back();
      out.person_users.push_back(row[h["user_id"]]);
    }
    const auto c = csv::parse_int(row[h["correct"]]);
    if (c != 0 && c != 1) throw std::runtime_error(path.string() + ": correct must be 0/1");
    m.responses[it->second].push_back({items.at(row[h["item_id"]]), static_cast<std::uint8_t>(c)});
  }
  m.validate();
  return out;
}

void write_rasch_fit(const std::filesystem::path& table_path, const std::filesystem::path& metadata_path,
                     const irt::RaschFit& fit) {
  {
    auto out = open_out(table_path);
    csv::write_row(out, {"item_id", "b_logit", "expected_p"});
    for (std::size_t i = 0; i < fit.item_ids.size(); ++i) {
      csv::write_row(out, {fit.item_ids[i], csv::format_double(fit.difficulties[i]),
                           csv::format_double(fit.expected_p[i])});
    }
  }
  ordered_json meta;
  meta["ability_sd"] = fit.ability.sd;
  meta["iterations"] = fit.iterations;
  meta["converged"] = fit.converged;
  meta["quadrature_nodes"] = fit.quadrature_nodes;
  meta["log_likelihood"] = fit.log_likelihood_trace.empty() ? 0.0 : fit.log_likelihood_trace.back();
  meta["log_likelihood_trace"] = fit.log_likelihood_trace;
  auto out = open_out(metadata_path);
  out << meta.dump(2) << '\n';
}

irt::RaschFit read_rasch_fit(const std::filesystem::path& table_path,
                             const std::filesystem::path& metadata_path) {
  irt::RaschFit fit;
  const auto rows = csv::read_file(table_path);
  if (rows.empty()) throw std::runtime_error(table_path.string() + ": empty fit table");
  const csv::Header h(rows[0], {"item_id", "b_logit", "expected_p"});
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) continue;
    fit.item_ids.push_back(rows[r][h["item_id"]]);
    fit.difficulties.push_back(csv::parse_double(rows[r][h["b_logit"]]));
    fit.expected_p.push_back(csv::parse_double(rows[r][h["expected_p"]]));
  }
  std::ifstream in(metadata_path);
  if (!in) throw std::runtime_error("cannot open " + metadata_path.string());
  const auto meta = nlohmann::json::parse(in);
  fit.ability.sd = meta.at("ability_sd").get<double>();
  fit.iterations = meta.at("iterations").get<int>();
  fit.converged = meta.at("converged").get<bool>();
  fit.quadrature_nodes = meta.at("quadrature_nodes").get<int>();
  fit.log_likelihood_trace = meta.at("log_likelihood_trace").get<std::vector<double>>();
  return fit;
}

std::string serialize_sample(const StratifiedSample& sample) {
  auto item_json = [](const SampledItem& it) {
    ordered_json j;
    j["item_id"] = it.item_id;
    j["stratum"] = it.stratum;
    j["expected_p"] = it.expected_p;
    return j;
  };
  ordered_json j;
  j["domain"] = std::string(to_string(sample.domain));
  j["seed"] = sample.seed;
  j["n_per_stratum"] = sample.n_per_stratum;
  j["borders"] = sample.borders;
  j["items"] = ordered_json::array();
  for (const auto& it : sample.items) j["items"].push_back(item_json(it));
  j["anchors"] = ordered_json::array();
  for (const auto& a : sample.anchors) j["anchors"].push_back(item_json(a));
  return j.dump(2) + "\n";
}

StratifiedSample parse_sample(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  auto item_from = [](const nlohmann::json& x) {
    return SampledItem{x.at("item_id").get<std::string>(), x.at("stratum").get<int>(),
                       x.at("expected_p").get<double>()};
  };
  StratifiedSample s;
  s.domain = parse_domain(j.at("domain").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_per_stratum = j.at("n_per_stratum").get<int>();
  s.borders = j.at("borders").get<std::array<double, 3>>();
  for (const auto& x : j.at("items")) s.items.push_back(item_from(x));
  const auto& anchors = j.at("anchors");
  if (anchors.size() != 2) throw std::runtime_error("sample manifest must list two anchors");
  s.anchors = {item_from(anchors[0]), item_from(anchors[1])};
  return s;
}

}  // namespace diffcal::data
