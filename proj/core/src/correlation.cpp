#include <spdlog/spdlog.h>

#include <cmath>

#include "diffcal/analysis.hpp"
#include "diffcal/stats.hpp"

namespace diffcal::analysis {

std::optional<double> try_spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) return std::nullopt;
  const auto rx = stats::average_ranks(x);
  const auto ry = stats::average_ranks(y);
  const double r = stats::pearson(rx, ry);
  if (std::isnan(r)) return std::nullopt;
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 3) throw UndefinedCorrelationError("spearman: need at least 3 observations");
  const auto r = try_spearman(x, y);
  if (!r) throw UndefinedCorrelationError("spearman: constant input vector");
  return *r;
}

ConditionEstimate orient(const ConditionEstimate& e) {
  if (e.orientation == Orientation::harder_is_larger) return e;
  ConditionEstimate out = e;
  out.orientation = Orientation::harder_is_larger;
  for (auto& [id, v] : out.values) v = -v;
  return out;
}

AlignedSeries align(const ConditionEstimate& e, const std::map<std::string, double>& expected_p) {
  const auto o = orient(e);
  AlignedSeries s;
  for (const auto& [id, p] : expected_p) {
    const auto it = o.values.find(id);
    if (it == o.values.end() || o.excluded.count(id)) continue;
    s.item_ids.push_back(id);
    s.estimate.push_back(it->second);
    s.criterion.push_back(-p);
  }
  if (s.item_ids.empty()) throw std::invalid_argument("no items shared by the estimate and the criterion");
  return s;
}

bt::WinMatrix win_matrix(std::span<const elicit::JudgementRecord> records, std::span<const std::string> item_ids,
                         elicit::Decision decision) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < item_ids.size(); ++i) index[item_ids[i]] = i;
  bt::WinMatrix w(item_ids.size());
  for (const auto& r : records) {
    if (r.cell.format != elicit::Format::pairwise) throw std::invalid_argument("win_matrix: absolute record");
    if (!r.parsed || r.item_ids.size() != 2) continue;
    const auto a = index.at(r.item_ids[0]), b = index.at(r.item_ids[1]);
    if (decision == elicit::Decision::hard) {
      if (*r.parsed == 1.0)
        w.add(a, b, 1.0);
      else
        w.add(b, a, 1.0);
    } else {
      const double p = r.soft_pairwise ? r.soft_pairwise->p_first_harder : *r.parsed;
      const auto [ab, ba] = bt::soft_to_pseudocounts(p);
      w.add(a, b, static_cast<double>(ab));
      w.add(b, a, static_cast<double>(ba));
    }
  }
  return w;
}

ConditionEstimate estimate_condition(const elicit::DesignCell& cell,
                                     std::span<const elicit::JudgementRecord> records,
                                     std::span<const std::string> item_ids, const bt::BTConfig& bt_config,
                                     std::optional<bt::BTResult>* fit) {
  ConditionEstimate e;
  e.cell = cell;
  std::vector<elicit::JudgementRecord> mine;
  for (const auto& r : records)
    if (r.cell == cell) mine.push_back(r);

  if (cell.format == elicit::Format::absolute) {
    e.orientation = Orientation::proportion_correct;
    std::map<std::string, const elicit::JudgementRecord*> by_item;
    for (const auto& r : mine) by_item[r.item_ids.at(0)] = &r;
    std::size_t failed = 0;
    for (const auto& id : item_ids) {
      const auto it = by_item.find(id);
      if (it == by_item.end()) {
        e.excluded[id] = "no judgement";
        continue;
      }
      const auto& r = *it->second;
      if (!r.parsed) {
        e.excluded[id] = "parse failure";
        ++failed;
        continue;
      }
      e.values[id] = cell.decision == elicit::Decision::soft && r.soft_absolute ? r.soft_absolute->p_soft : *r.parsed;
    }
    if (failed) spdlog::warn("{}: {} absolute judgements excluded after parse failures", cell.id(), failed);
    return e;
  }

  e.orientation = Orientation::harder_is_larger;
  std::size_t failed = 0;
  for (const auto& r : mine) failed += !r.parsed;
  if (failed) spdlog::warn("{}: {} pairwise judgements excluded after parse failures", cell.id(), failed);
  try {
    const auto w = win_matrix(mine, item_ids, cell.decision);
    auto res = bt::bt_fit(w, bt_config);
    if (!res.converged)
      spdlog::warn("{}: Bradley-Terry fit stopped after {} iterations without converging", cell.id(), res.iterations);
    for (std::size_t i = 0; i < item_ids.size(); ++i) e.values[item_ids[i]] = res.lambda[i];
    if (fit) *fit = std::move(res);
  } catch (const std::runtime_error& ex) {
    spdlog::warn("{}: {}", cell.id(), ex.what());
    for (const auto& id : item_ids) e.excluded[id] = std::string("Bradley-Terry fit failed: ") + ex.what();
  }
  return e;
}

DomainData make_domain_data(Domain domain, const std::map<std::string, double>& expected_p,
                            std::span<const ConditionEstimate> estimates) {
  DomainData d;
  d.domain = domain;
  for (const auto& [id, p] : expected_p) {
    d.item_ids.push_back(id);
    d.criterion.push_back(-p);
  }
  for (const auto& est : estimates) {
    if (est.cell.domain != domain) throw std::invalid_argument("estimate for another domain: " + est.cell.id());
    const auto o = orient(est);
    auto& vals = d.conditions[est.cell.condition()];
    if (!vals.empty()) throw std::invalid_argument("duplicate condition " + est.cell.condition());
    for (const auto& id : d.item_ids) {
      const auto it = o.values.find(id);
      vals.push_back(it == o.values.end() || o.excluded.count(id) ? std::numeric_limits<double>::quiet_NaN()
                                                                    : it->second);
    }
  }
  return d;
}

}  // namespace diffcal::analysis
