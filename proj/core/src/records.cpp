#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "diffcal/data.hpp"

namespace diffcal {

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::addition: return "addition";
    case Domain::subtraction: return "subtraction";
    case Domain::multiplication: return "multiplication";
    case Domain::division: return "division";
    case Domain::calculation_order: return "calculation_order";
    case Domain::text_problems: return "text_problems";
  }
  return "unknown";
}

std::string_view display_name(Domain d) {
  switch (d) {
    case Domain::calculation_order: return "calculation order";
    case Domain::text_problems: return "text problems";
    default: return to_string(d);
  }
}

Domain parse_domain(std::string_view text) {
  for (Domain d : kAllDomains) {
    if (text == to_string(d) || text == display_name(d)) return d;
  }
  throw std::invalid_argument("unknown domain '" + std::string(text) + "'");
}

int default_grade(Domain d) {
  switch (d) {
    case Domain::addition: return 3;
    case Domain::subtraction: return 4;
    case Domain::multiplication: return 6;
    case Domain::division: return 7;
    case Domain::calculation_order: return 8;
    case Domain::text_problems: return 5;
  }
  return 0;
}

}  // namespace diffcal

namespace diffcal::data {

ItemBank::ItemBank(std::vector<ItemBankEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.text.empty()) throw std::invalid_argument("item bank: empty text for '" + e.item_id + "'");
    if (e.time_limit_seconds <= 0)
      throw std::invalid_argument("item bank: non-positive time limit for '" + e.item_id + "'");
    if (!index_.emplace(e.item_id, i).second)
      throw std::invalid_argument("item bank: duplicate item id '" + e.item_id + "'");
  }
}

const ItemBankEntry* ItemBank::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const ItemBankEntry& ItemBank::at(const std::string& item_id) const {
  const auto* e = find(item_id);
  if (!e) throw std::out_of_range("item '" + item_id + "' is not in the item bank");
  return *e;
}

std::string_view to_string(FilterStage s) {
  switch (s) {
    case FilterStage::items: return "items";
    case FilterStage::users: return "users";
    case FilterStage::grade: return "grade";
  }
  return "unknown";
}

EmptyDomainError::EmptyDomainError(Domain domain, FilterStage stage)
    : std::runtime_error("domain '" + std::string(to_string(domain)) +
                         "' has no responses left after the " + std::string(to_string(stage)) +
                         " filter"),
      domain_(domain),
      stage_(stage) {}

namespace {

// One items -> users -> grade pass over the kept rows of a single domain.
// Returns true when any row was removed.
bool filter_pass(std::span<const ResponseRecord> records, const std::vector<std::size_t>& rows,
                 std::vector<char>& keep, Domain domain, const FilterConfig& config) {
  bool changed = false;

  std::map<std::string_view, int> item_counts;
  for (auto r : rows)
    if (keep[r]) ++item_counts[records[r].item_id];
  bool any = false;
  for (auto r : rows) {
    if (!keep[r]) continue;
    if (item_counts[records[r].item_id] > config.min_item_responses) {
      any = true;
    } else {
      keep[r] = 0;
      changed = true;
    }
  }
  if (!any) throw EmptyDomainError(domain, FilterStage::items);

  std::map<std::string_view, std::set<std::string_view>> user_tasks;
  for (auto r : rows)
    if (keep[r]) user_tasks[records[r].user_id].insert(records[r].item_id);
  any = false;
  for (auto r : rows) {
    if (!keep[r]) continue;
    const auto n = static_cast<int>(user_tasks[records[r].user_id].size());
    if (n > config.min_user_tasks && n < config.max_user_tasks) {
      any = true;
    } else {
      keep[r] = 0;
      changed = true;
    }
  }
  if (!any) throw EmptyDomainError(domain, FilterStage::users);

  auto grade_it = config.domain_grades.find(domain);
  if (grade_it == config.domain_grades.end())
    throw std::invalid_argument("no grade configured for domain '" + std::string(to_string(domain)) + "'");
  any = false;
  for (auto r : rows) {
    if (!keep[r]) continue;
    if (records[r].grade == grade_it->second) {
      any = true;
    } else {
      keep[r] = 0;
      changed = true;
    }
  }
  if (!any) throw EmptyDomainError(domain, FilterStage::grade);
  return changed;
}

}  // namespace

std::vector<ResponseRecord> filter_responses(std::span<const ResponseRecord> records,
                                             const ItemBank& item_bank, const FilterConfig& config) {
  if (records.empty()) throw std::invalid_argument("filter_responses: no records");
  std::map<Domain, std::vector<std::size_t>> by_domain;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.correct != 0 && rec.correct != 1)
      throw std::invalid_argument("response of user '" + rec.user_id + "' is not 0/1");
    if (const auto* e = item_bank.find(rec.item_id); e && e->domain != rec.domain)
      throw std::invalid_argument("item '" + rec.item_id + "' appears under two domains");
    by_domain[rec.domain].push_back(r);
  }
  std::vector<char> keep(records.size(), 1);
  for (const auto& [domain, rows] : by_domain) {
    while (filter_pass(records, rows, keep, domain, config) && config.iterate_to_fixpoint) {
    }
  }
  std::vector<ResponseRecord> out;
  for (std::size_t r = 0; r < records.size(); ++r)
    if (keep[r]) out.push_back(records[r]);
  return out;
}

SessionizedResponses sessionize(std::span<const ResponseRecord> records, const SessionRule& rule) {
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t r = 0; r < records.size(); ++r) by_user[records[r].user_id].push_back(r);

  struct Session {
    std::vector<std::pair<std::string, int>> responses;  // first attempts
  };
  std::map<std::string, std::vector<Session>> kept;
  SessionizedResponses out;
  std::set<std::string> item_set;

  for (auto& [user, rows] : by_user) {
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    std::vector<Session> sessions;
    auto close = [&](Session& s, std::set<std::string>& seen) {
      if (static_cast<int>(seen.size()) >= rule.min_unique_items) {
        sessions.push_back(std::move(s));
      } else if (!seen.empty()) {
        ++out.sessions_dropped;
      }
      s = Session{};
      seen.clear();
    };
    Session current;
    std::set<std::string> seen;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& rec = records[rows[k]];
      if (k > 0 && rec.timestamp - records[rows[k - 1]].timestamp > rule.gap_seconds) close(current, seen);
      if (seen.insert(rec.item_id).second) current.responses.emplace_back(rec.item_id, rec.correct);
    }
    close(current, seen);
    if (sessions.empty()) {
      ++out.users_excluded;
      continue;
    }
    for (const auto& s : sessions)
      for (const auto& [item, c] : s.responses) item_set.insert(item);
    kept.emplace(user, std::move(sessions));
  }

  auto& m = out.matrix;
  m.items.assign(item_set.begin(), item_set.end());
  std::map<std::string_view, std::uint32_t> item_index;
  for (std::size_t i = 0; i < m.items.size(); ++i) item_index[m.items[i]] = static_cast<std::uint32_t>(i);

  for (const auto& [user, sessions] : kept) {
    const double w = 1.0 / static_cast<double>(sessions.size());
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      m.persons.push_back(user + "#" + std::to_string(s + 1));
      m.weights.push_back(w);
      out.person_users.push_back(user);
      std::vector<irt::Response> resp;
      resp.reserve(sessions[s].responses.size());
      for (const auto& [item, c] : sessions[s].responses)
        resp.push_back({item_index.at(item), static_cast<std::uint8_t>(c)});
      m.responses.push_back(std::move(resp));
    }
  }
  return out;
}

}  // namespace diffcal::data
