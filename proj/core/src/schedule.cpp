#include <set>
#include <stdexcept>

#include "diffcal/elicitation.hpp"
#include "diffcal/rng.hpp"

namespace diffcal::elicit {

PairSchedule schedule_pairs(std::span<const std::string> item_ids, std::uint64_t seed) {
  if (item_ids.size() < 2) throw std::invalid_argument("pair schedule needs at least two items");
  if (std::set<std::string>(item_ids.begin(), item_ids.end()).size() != item_ids.size())
    throw std::invalid_argument("pair schedule: duplicate item ids");
  PairSchedule s;
  s.seed = seed;
  Rng rng(seed);
  s.pairs.reserve(item_ids.size() * (item_ids.size() - 1) / 2);
  for (std::size_t i = 0; i < item_ids.size(); ++i)
    for (std::size_t j = i + 1; j < item_ids.size(); ++j) {
      if (rng.bernoulli(0.5))
        s.pairs.emplace_back(item_ids[j], item_ids[i]);
      else
        s.pairs.emplace_back(item_ids[i], item_ids[j]);
    }
  rng.shuffle(s.pairs.begin(), s.pairs.end());
  return s;
}

PairSchedule schedule_pairs(const data::StratifiedSample& sample, std::uint64_t seed) {
  const auto ids = sample.item_ids();
  const auto required = static_cast<std::size_t>(4 * sample.n_per_stratum);
  if (ids.size() != required)
    throw std::invalid_argument("pair schedule expects " + std::to_string(required) + " sampled items, got " +
                                std::to_string(ids.size()));
  return schedule_pairs(ids, seed);
}

}  // namespace diffcal::elicit
