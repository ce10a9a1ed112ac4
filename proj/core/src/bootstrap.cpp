#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include "diffcal/analysis.hpp"
#include "diffcal/rng.hpp"
#include "diffcal/stats.hpp"

namespace diffcal::analysis {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ResolvedGroup {
  std::vector<std::size_t> cells;  // c * D + d
};

ResolvedGroup resolve(const GroupSpec& g, const std::vector<std::string>& conditions,
                      const std::vector<Domain>& domains) {
  ResolvedGroup r;
  if (g.conditions.empty()) throw std::invalid_argument("group '" + g.name + "' has no conditions");
  std::vector<std::size_t> ds;
  if (g.domains.empty()) {
    for (std::size_t d = 0; d < domains.size(); ++d) ds.push_back(d);
  } else {
    for (auto dom : g.domains) {
      const auto it = std::find(domains.begin(), domains.end(), dom);
      if (it == domains.end())
        throw std::invalid_argument("group '" + g.name + "': domain " + std::string(to_string(dom)) +
                                    " has no data");
      ds.push_back(static_cast<std::size_t>(it - domains.begin()));
    }
  }
  for (const auto& c : g.conditions) {
    const auto it = std::find(conditions.begin(), conditions.end(), c);
    if (it == conditions.end()) throw std::invalid_argument("group '" + g.name + "': unknown condition " + c);
    for (auto d : ds) r.cells.push_back(static_cast<std::size_t>(it - conditions.begin()) * domains.size() + d);
  }
  return r;
}

double group_mean(const ResolvedGroup& g, std::span<const double> rs) {
  double s = 0;
  for (auto i : g.cells) {
    if (std::isnan(rs[i])) return kNaN;
    s += rs[i];
  }
  return s / static_cast<double>(g.cells.size());
}

Estimate summarize(double point, const std::vector<double>& draws, bool contrast) {
  Estimate e;
  e.point = point;
  std::vector<double> valid;
  valid.reserve(draws.size());
  for (double v : draws)
    if (!std::isnan(v)) valid.push_back(v);
  e.valid = valid.size();
  e.degenerate = draws.size() - valid.size();
  if (!valid.empty()) {
    std::sort(valid.begin(), valid.end());
    e.lower = stats::quantile_type7_sorted(valid, 0.025);
    e.upper = stats::quantile_type7_sorted(valid, 0.975);
    if (contrast) e.excludes_zero = e.lower > 0 || e.upper < 0;
  }
  return e;
}

double masked_spearman(std::span<const std::size_t> idx, const std::vector<double>& criterion,
                       const std::vector<double>& values, std::vector<double>& x, std::vector<double>& y) {
  x.clear();
  y.clear();
  for (auto i : idx) {
    if (std::isnan(values[i])) continue;
    x.push_back(criterion[i]);
    y.push_back(values[i]);
  }
  const auto r = try_spearman(x, y);
  return r ? *r : kNaN;
}

}  // namespace

double AnalysisResult::rs(const std::string& condition, Domain d) const {
  const auto c = std::find(conditions.begin(), conditions.end(), condition);
  const auto k = std::find(domains.begin(), domains.end(), d);
  if (c == conditions.end() || k == domains.end()) throw std::out_of_range("no such condition/domain");
  return point_rs[static_cast<std::size_t>(c - conditions.begin())][static_cast<std::size_t>(k - domains.begin())];
}

AnalysisResult bootstrap_analysis(std::span<const DomainData> data, std::span<const GroupSpec> groups,
                                  std::span<const ContrastSpec> contrasts, const BootstrapConfig& config) {
  if (config.iterations < 1) throw std::invalid_argument("bootstrap needs at least one iteration");
  if (data.empty()) throw std::invalid_argument("bootstrap needs at least one domain");

  AnalysisResult res;
  res.iterations = config.iterations;
  res.seed = config.seed;
  for (const auto& [name, v] : data.front().conditions) res.conditions.push_back(name);
  std::set<Domain> seen;
  for (const auto& d : data) {
    if (!seen.insert(d.domain).second) throw std::invalid_argument("domain listed twice");
    res.domains.push_back(d.domain);
    if (d.criterion.size() != d.item_ids.size()) throw std::invalid_argument("criterion / item count mismatch");
    if (d.conditions.size() != res.conditions.size())
      throw std::invalid_argument("domains carry different condition sets");
    for (const auto& c : res.conditions) {
      const auto it = d.conditions.find(c);
      if (it == d.conditions.end())
        throw std::invalid_argument("condition " + c + " missing in domain " + std::string(to_string(d.domain)));
      if (it->second.size() != d.item_ids.size()) throw std::invalid_argument("condition " + c + ": wrong length");
    }
  }
  const std::size_t C = res.conditions.size(), D = data.size(), cells = C * D;

  // Values per (condition, domain) in a flat layout for the hot loop.
  std::vector<const std::vector<double>*> values(cells);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) values[c * D + d] = &data[d].conditions.at(res.conditions[c]);

  std::vector<double> point(cells);
  {
    std::vector<double> x, y;
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<std::size_t> idx(data[d].item_ids.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t c = 0; c < C; ++c)
        point[c * D + d] = masked_spearman(idx, data[d].criterion, *values[c * D + d], x, y);
    }
  }
  res.point_rs.assign(C, std::vector<double>(D));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) res.point_rs[c][d] = point[c * D + d];

  std::vector<ResolvedGroup> g_res, a_res, b_res;
  for (const auto& g : groups) g_res.push_back(resolve(g, res.conditions, res.domains));
  for (const auto& k : contrasts) {
    a_res.push_back(resolve(k.a, res.conditions, res.domains));
    b_res.push_back(resolve(k.b, res.conditions, res.domains));
  }

  const auto B = static_cast<std::size_t>(config.iterations);
  std::vector<double> draws(B * cells);
  auto run_range = [&](std::size_t from, std::size_t to) {
    std::vector<double> x, y;
    std::vector<std::size_t> idx;
    for (std::size_t b = from; b < to; ++b) {
      Rng rng(derive_seed(config.seed, b));
      double* out = draws.data() + b * cells;
      for (std::size_t d = 0; d < D; ++d) {
        const auto n = data[d].item_ids.size();
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = config.identity_resample ? i : rng.uniform_index(n);
        for (std::size_t c = 0; c < C; ++c)
          out[c * D + d] = masked_spearman(idx, data[d].criterion, *values[c * D + d], x, y);
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(config.threads, 1)), B);
  if (n_threads <= 1) {
    run_range(0, B);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back(run_range, B * t / n_threads, B * (t + 1) / n_threads);
    for (auto& th : pool) th.join();
  }

  auto iteration = [&](std::size_t b) { return std::span<const double>(draws.data() + b * cells, cells); };
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<double> dr(B);
    for (std::size_t b = 0; b < B; ++b) dr[b] = group_mean(g_res[k], iteration(b));
    res.groups[groups[k].name] = summarize(group_mean(g_res[k], point), dr, false);
    if (config.keep_draws) res.draws[groups[k].name] = std::move(dr);
  }
  for (std::size_t k = 0; k < contrasts.size(); ++k) {
    std::vector<double> dr(B);
    for (std::size_t b = 0; b < B; ++b)
      dr[b] = group_mean(a_res[k], iteration(b)) - group_mean(b_res[k], iteration(b));
    res.contrasts[contrasts[k].name] =
        summarize(group_mean(a_res[k], point) - group_mean(b_res[k], point), dr, true);
    if (config.keep_draws) res.draws[contrasts[k].name] = std::move(dr);
  }
  return res;
}

AnalysisPlan standard_plan(std::span<const std::string> models, std::span<const Domain> domains) {
  using elicit::Decision;
  using elicit::Format;
  using elicit::Prompting;
  AnalysisPlan plan;
  auto cond = [](const std::string& m, Format f, Decision d, Prompting p) {
    return elicit::DesignCell{m, f, d, p, Domain::addition}.condition();
  };
  const std::array formats{Format::absolute, Format::pairwise};
  const std::array decisions{Decision::hard, Decision::soft};
  const std::array promptings{Prompting::zero_shot, Prompting::few_shot};

  std::vector<std::string> everything;
  for (const auto& m : models) {
    std::vector<std::string> all;
    for (auto f : formats)
      for (auto d : decisions)
        for (auto p : promptings) {
          all.push_back(cond(m, f, d, p));
          plan.groups.push_back({"condition:" + all.back(), {all.back()}, {}});
        }
    plan.groups.push_back({"model:" + m, all, {}});
    everything.insert(everything.end(), all.begin(), all.end());

    // Factor contrasts: the average effect, then one per stratum of the
    // remaining two factors.
    auto select = [&](auto pred) {
      std::vector<std::string> out;
      for (auto f : formats)
        for (auto d : decisions)
          for (auto p : promptings)
            if (pred(f, d, p)) out.push_back(cond(m, f, d, p));
      return out;
    };
    auto add = [&](const std::string& factor, const std::string& stratum, auto a_pred, auto b_pred) {
      plan.contrasts.push_back(
          {"contrast:" + factor + ":" + m + ":" + stratum, {"a", select(a_pred), {}}, {"b", select(b_pred), {}}});
    };
    add("pairwise-absolute", "average", [](Format f, Decision, Prompting) { return f == Format::pairwise; },
        [](Format f, Decision, Prompting) { return f == Format::absolute; });
    for (auto p : promptings)
      for (auto d : decisions)
        add("pairwise-absolute", std::string(to_string(p)) + "/" + std::string(to_string(d)),
            [=](Format f, Decision dd, Prompting pp) { return f == Format::pairwise && dd == d && pp == p; },
            [=](Format f, Decision dd, Prompting pp) { return f == Format::absolute && dd == d && pp == p; });
    add("soft-hard", "average", [](Format, Decision d, Prompting) { return d == Decision::soft; },
        [](Format, Decision d, Prompting) { return d == Decision::hard; });
    for (auto f : formats)
      for (auto p : promptings)
        add("soft-hard", std::string(to_string(f)) + "/" + std::string(to_string(p)),
            [=](Format ff, Decision d, Prompting pp) { return d == Decision::soft && ff == f && pp == p; },
            [=](Format ff, Decision d, Prompting pp) { return d == Decision::hard && ff == f && pp == p; });
    add("few-zero", "average", [](Format, Decision, Prompting p) { return p == Prompting::few_shot; },
        [](Format, Decision, Prompting p) { return p == Prompting::zero_shot; });
    for (auto f : formats)
      for (auto d : decisions)
        add("few-zero", std::string(to_string(f)) + "/" + std::string(to_string(d)),
            [=](Format ff, Decision dd, Prompting p) { return p == Prompting::few_shot && ff == f && dd == d; },
            [=](Format ff, Decision dd, Prompting p) { return p == Prompting::zero_shot && ff == f && dd == d; });
  }
  for (auto d : domains) plan.groups.push_back({"domain:" + std::string(to_string(d)), everything, {d}});
  return plan;
}

}  // namespace diffcal::analysis
