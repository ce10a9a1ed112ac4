#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>

#include "diffcal/analysis.hpp"
#include "diffcal/csv.hpp"

namespace diffcal::analysis {
namespace {

std::string num(double v) { return std::isnan(v) ? "NA" : csv::format_double(v); }

std::string short_domain(Domain d) {
  switch (d) {
    case Domain::addition: return "Add";
    case Domain::subtraction: return "Sub";
    case Domain::multiplication: return "Mult";
    case Domain::division: return "Div";
    case Domain::calculation_order: return "Calc";
    case Domain::text_problems: return "Text";
  }
  return "?";
}

std::string title_case(std::string_view s) {
  std::string out(s);
  for (auto& ch : out)
    if (ch == '_') ch = '-';
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string with_ci(const Estimate& e) {
  return format_r(e.point) + " [" + format_r(e.lower) + ", " + format_r(e.upper) + "]";
}

std::string pad(const std::string& s, std::size_t w) {
  // Width in code points so the multi-byte separator does not skew columns.
  std::size_t cps = 0;
  for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80;
  return cps >= w ? s + " " : s + std::string(w - cps, ' ');
}

std::vector<std::string> models_of(const AnalysisResult& r) {
  std::vector<std::string> models;
  for (const auto& c : r.conditions) {
    const auto m = c.substr(0, c.find('/'));
    if (std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
  }
  return models;
}

std::string condition_label(const std::string& condition) {
  // model/format/decision/prompting
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto slash = condition.find('/', start);
    parts.push_back(condition.substr(start, slash == std::string::npos ? std::string::npos : slash - start));
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  if (parts.size() != 4) return condition;
  return title_case(parts[1]) + " / " + title_case(parts[2]) + " / " + title_case(parts[3]);
}

}  // namespace

std::string format_r(double r) {
  if (std::isnan(r)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", r);
  std::string s = buf;
  if (s == "-0.000") s = "0.000";
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  else if (s.rfind("-0.", 0) == 0) s.erase(1, 1);
  return s;
}

void write_condition_table_csv(std::ostream& out, const AnalysisResult& r) {
  csv::Row header{"condition"};
  for (auto d : r.domains) header.emplace_back(to_string(d));
  for (const char* h : {"mean", "lower", "upper", "valid", "degenerate"}) header.emplace_back(h);
  csv::write_row(out, header);
  for (std::size_t c = 0; c < r.conditions.size(); ++c) {
    csv::Row row{r.conditions[c]};
    for (std::size_t d = 0; d < r.domains.size(); ++d) row.push_back(num(r.point_rs[c][d]));
    const auto it = r.groups.find("condition:" + r.conditions[c]);
    if (it != r.groups.end()) {
      const auto& e = it->second;
      for (double v : {e.point, e.lower, e.upper}) row.push_back(num(v));
      row.push_back(std::to_string(e.valid));
      row.push_back(std::to_string(e.degenerate));
    } else {
      for (int k = 0; k < 5; ++k) row.emplace_back("NA");
    }
    csv::write_row(out, row);
  }
}

void write_group_table_csv(std::ostream& out, const AnalysisResult& r) {
  csv::write_row(out, {"group", "point", "lower", "upper", "valid", "degenerate"});
  for (const auto& [name, e] : r.groups)
    csv::write_row(out, {name, num(e.point), num(e.lower), num(e.upper), std::to_string(e.valid),
                         std::to_string(e.degenerate)});
}

void write_contrast_table_csv(std::ostream& out, const AnalysisResult& r) {
  csv::write_row(out, {"contrast", "point", "lower", "upper", "excludes_zero", "valid", "degenerate"});
  for (const auto& [name, e] : r.contrasts)
    csv::write_row(out, {name, num(e.point), num(e.lower), num(e.upper), e.excludes_zero ? "1" : "0",
                         std::to_string(e.valid), std::to_string(e.degenerate)});
}

void write_cost_table_csv(std::ostream& out, std::span<const CostRow> rows) {
  csv::write_row(out, {"group", "judgements", "total_time_s", "prompt_tokens", "completion_tokens", "prompt_cost",
                       "completion_cost", "total_cost", "missing_usage"});
  for (const auto& row : rows)
    csv::write_row(out, {row.group, std::to_string(row.judgements), num(row.total_time_s),
                         std::to_string(row.prompt_tokens), std::to_string(row.completion_tokens),
                         num(row.prompt_cost), num(row.completion_cost), num(row.cost()),
                         std::to_string(row.missing_usage)});
}

void write_text_report(std::ostream& out, const AnalysisResult& r, std::span<const CostRow> costs) {
  const auto models = models_of(r);
  out << "Spearman agreement with empirical difficulty (B = " << r.iterations << ", seed = " << r.seed << ")\n\n";

  out << "Overall agreement per model\n";
  out << pad("Model", 24) << "Mean [95% CI]\n";
  for (const auto& m : models)
    if (const auto it = r.groups.find("model:" + m); it != r.groups.end())
      out << pad(m, 24) << with_ci(it->second) << "\n";
  out << "\n";

  for (const auto& m : models) {
    out << "Agreement by configuration and domain: " << m << "\n";
    out << pad("Configuration", 34);
    for (auto d : r.domains) out << pad(short_domain(d), 7);
    out << "Mean [95% CI]\n";
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
      if (r.conditions[c].rfind(m + "/", 0) != 0) continue;
      out << pad(condition_label(r.conditions[c]), 34);
      for (std::size_t d = 0; d < r.domains.size(); ++d) out << pad(format_r(r.point_rs[c][d]), 7);
      if (const auto it = r.groups.find("condition:" + r.conditions[c]); it != r.groups.end())
        out << with_ci(it->second);
      out << "\n";
    }
    out << "\n";
  }

  const std::pair<const char*, const char*> factors[] = {
      {"pairwise-absolute", "Difference: pairwise minus absolute"},
      {"soft-hard", "Difference: soft minus hard"},
      {"few-zero", "Difference: few-shot minus zero-shot"},
  };
  for (const auto& [key, title] : factors) {
    std::vector<std::string> strata;
    for (const auto& [name, e] : r.contrasts) {
      const std::string prefix = std::string("contrast:") + key + ":";
      if (name.rfind(prefix, 0) != 0) continue;
      const auto rest = name.substr(prefix.size());
      const auto stratum = rest.substr(rest.find(':') + 1);
      if (std::find(strata.begin(), strata.end(), stratum) == strata.end()) strata.push_back(stratum);
    }
    if (strata.empty()) continue;
    std::stable_partition(strata.begin(), strata.end(), [](const std::string& s) { return s == "average"; });
    out << title << " (* = 95% interval excludes zero)\n";
    out << pad("Configuration", 34);
    for (const auto& m : models) out << pad(m, 16);
    out << "\n";
    for (const auto& s : strata) {
      std::string label = s == "average" ? "Average effect" : s;
      if (s != "average") {
        const auto slash = s.find('/');
        label = title_case(s.substr(0, slash)) + " / " + title_case(s.substr(slash + 1));
      }
      out << pad(label, 34);
      for (const auto& m : models) {
        const auto it = r.contrasts.find(std::string("contrast:") + key + ":" + m + ":" + s);
        out << pad(it == r.contrasts.end() ? "" : format_r(it->second.point) + (it->second.excludes_zero ? "*" : ""),
                   16);
      }
      out << "\n";
    }
    out << "\n";
  }

  out << "Agreement per domain (all configurations and models)\n";
  out << pad("Domain", 24) << "Mean [95% CI]\n";
  for (auto d : r.domains)
    if (const auto it = r.groups.find("domain:" + std::string(to_string(d))); it != r.groups.end())
      out << pad(title_case(display_name(d)), 24) << with_ci(it->second) << "\n";
  out << "\n";

  std::size_t degenerate = 0;
  for (const auto& [name, e] : r.groups) degenerate = std::max(degenerate, e.degenerate);
  for (const auto& [name, e] : r.contrasts) degenerate = std::max(degenerate, e.degenerate);
  out << "Degenerate bootstrap iterations (largest count over all estimates): " << degenerate << "\n\n";

  if (!costs.empty()) {
    out << "Requests, time, tokens and cost\n";
    out << pad("Group", 34) << pad("Judgements", 12) << pad("Time (s)", 12) << pad("Prompt tok", 14)
        << pad("Compl. tok", 12) << pad("Cost", 10) << "Missing usage\n";
    for (const auto& row : costs) {
      char t[32], cost[32];
      std::snprintf(t, sizeof t, "%.1f", row.total_time_s);
      std::snprintf(cost, sizeof cost, "%.2f", row.cost());
      out << pad(row.group, 34) << pad(std::to_string(row.judgements), 12) << pad(t, 12)
          << pad(std::to_string(row.prompt_tokens), 14) << pad(std::to_string(row.completion_tokens), 12)
          << pad(cost, 10) << row.missing_usage << "\n";
    }
  }
}

}  // namespace diffcal::analysis
