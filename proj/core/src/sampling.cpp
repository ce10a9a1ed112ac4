#include <algorithm>

#include "diffcal/data.hpp"
#include "diffcal/rng.hpp"
#include "diffcal/stats.hpp"

namespace diffcal::data {

std::vector<std::string> StratifiedSample::item_ids() const {
  std::vector<std::string> ids;
  ids.reserve(items.size());
  for (const auto& it : items) ids.push_back(it.item_id);
  return ids;
}

InsufficientStratumError::InsufficientStratumError(int stratum, std::size_t available,
                                                   std::size_t required)
    : std::runtime_error("stratum " + std::to_string(stratum) + " has " + std::to_string(available) +
                         " eligible open-ended items, " + std::to_string(required) + " required"),
      stratum_(stratum),
      available_(available) {}

StratifiedSample stratified_sample(const irt::RaschFit& fit, const ItemBank& item_bank,
                                   Domain domain, int n_per_stratum, std::uint64_t seed) {
  if (n_per_stratum < 1) throw std::invalid_argument("n_per_stratum must be positive");
  if (fit.item_ids.size() != fit.expected_p.size())
    throw std::invalid_argument("fit has mismatched item ids and expected proportions");
  if (fit.expected_p.empty()) throw std::invalid_argument("fit has no items");

  StratifiedSample sample;
  sample.domain = domain;
  sample.n_per_stratum = n_per_stratum;
  sample.seed = seed;
  std::vector<double> sorted = fit.expected_p;
  std::sort(sorted.begin(), sorted.end());
  sample.borders = {stats::quantile_type7_sorted(sorted, 0.25),
                    stats::quantile_type7_sorted(sorted, 0.50),
                    stats::quantile_type7_sorted(sorted, 0.75)};

  auto stratum_of = [&](double p) {
    for (int s = 0; s < 3; ++s)
      if (p <= sample.borders[static_cast<std::size_t>(s)]) return s + 1;
    return 4;
  };

  std::array<std::vector<SampledItem>, 4> eligible;
  for (std::size_t i = 0; i < fit.item_ids.size(); ++i) {
    const auto* entry = item_bank.find(fit.item_ids[i]);
    if (!entry || entry->domain != domain || !entry->open_ended) continue;
    const int s = stratum_of(fit.expected_p[i]);
    eligible[static_cast<std::size_t>(s - 1)].push_back({fit.item_ids[i], s, fit.expected_p[i]});
  }
  const auto n = static_cast<std::size_t>(n_per_stratum);
  for (int s = 1; s <= 4; ++s) {
    auto& pool = eligible[static_cast<std::size_t>(s - 1)];
    const std::size_t required = (s == 1 || s == 4) ? n + 1 : n;
    if (pool.size() < required) throw InsufficientStratumError(s, pool.size(), required);
    std::sort(pool.begin(), pool.end(),
              [](const SampledItem& a, const SampledItem& b) { return a.item_id < b.item_id; });
  }

  Rng rng(seed);
  for (auto& pool : eligible) {
    rng.shuffle(pool.begin(), pool.end());
    sample.items.insert(sample.items.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  }
  sample.anchors[0] = eligible[3][n];
  sample.anchors[1] = eligible[0][n];
  return sample;
}

}  // namespace diffcal::data
