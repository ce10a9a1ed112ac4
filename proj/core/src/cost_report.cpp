#include <set>
#include <tuple>

#include "diffcal/analysis.hpp"

namespace diffcal::analysis {

std::vector<CostRow> cost_report(std::span<const elicit::JudgementRecord> records,
                                 const std::map<std::string, llm::BackendProfile>& profiles, CostGrouping grouping) {
  std::map<std::string, CostRow> rows;
  std::map<std::string, std::set<std::string>> seen_calls, seen_judgements;
  std::map<std::string, std::string> row_model;

  for (const auto& r : records) {
    const auto& c = r.cell;
    const std::string group = grouping == CostGrouping::cell
                                  ? c.id()
                                  : c.model + "/" + std::string(elicit::to_string(c.format)) + "/" +
                                        std::string(elicit::to_string(c.prompting));
    auto& row = rows[group];
    row.group = group;
    row_model[group] = c.model;
    if (grouping == CostGrouping::cell) {
      ++row.judgements;
    } else {
      // Hard and soft cells share their calls; a judgement is the item (pair)
      // presented under one prompt, whichever decision rule read it.
      std::string j(diffcal::to_string(c.domain));
      for (const auto& id : r.item_ids) j += "|" + id;
      if (seen_judgements[group].insert(j).second) ++row.judgements;
    }
    if (!r.usage) {
      ++row.missing_usage;
      continue;
    }
    if (grouping == CostGrouping::cell) {
      row.prompt_tokens += r.usage->prompt_tokens;
      row.completion_tokens += r.usage->completion_tokens;
      row.total_time_s += r.latency_ms / 1000.0;
    } else {
      for (const auto& call : r.calls) {
        if (!seen_calls[group].insert(call.key).second) continue;
        row.prompt_tokens += call.usage.prompt_tokens;
        row.completion_tokens += call.usage.completion_tokens;
        row.total_time_s += call.latency_ms / 1000.0;
      }
    }
  }

  std::vector<CostRow> out;
  for (auto& [group, row] : rows) {
    const auto it = profiles.find(row_model[group]);
    if (it == profiles.end()) throw std::invalid_argument("no backend profile for model '" + row_model[group] + "'");
    row.prompt_cost = static_cast<double>(row.prompt_tokens) / 1000.0 * it->second.price_per_1k_prompt_tokens;
    row.completion_cost =
        static_cast<double>(row.completion_tokens) / 1000.0 * it->second.price_per_1k_completion_tokens;
    out.push_back(row);
  }
  return out;
}

}  // namespace diffcal::analysis
