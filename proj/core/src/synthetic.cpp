#include <cmath>
#include <cstdio>
#include <numeric>

#include "diffcal/data.hpp"
#include "diffcal/rng.hpp"

namespace diffcal::data {
namespace {

std::string padded(const std::string& prefix, char tag, int index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, index);
  return prefix + tag + buf;
}

std::string item_text(Domain domain, int index) {
  const int a = 11 + index;
  const int b = 2 + (index * 7) % 9;
  const std::string sa = std::to_string(a), sb = std::to_string(b);
  switch (domain) {
    case Domain::addition: return sa + " + " + sb;
    case Domain::subtraction: return std::to_string(a + b * 10) + " - " + sb;
    case Domain::multiplication: return sa + " x " + sb;
    case Domain::division: return std::to_string(a * b) + " : " + sb;
    case Domain::calculation_order: return "$" + sa + "\\times" + sb + "+" + sb + "\\times4$";
    case Domain::text_problems:
      return "Sam heeft " + sa + " knikkers en krijgt er " + sb +
             " bij. Hoeveel knikkers heeft Sam nu?";
  }
  return sa;
}

}  // namespace

SyntheticLogs generate_synthetic_logs(const SyntheticSpec& spec) {
  if (spec.n_items < 1 || spec.n_users < 1 || spec.sessions_per_user < 1)
    throw std::invalid_argument("synthetic spec counts must be positive");
  if (spec.items_per_session < 0 || spec.items_per_session > spec.n_items)
    throw std::invalid_argument("items_per_session must lie in [0, n_items]");
  if (spec.ability_sd < 0) throw std::invalid_argument("ability_sd must be non-negative");

  Rng rng(spec.seed);
  SyntheticLogs out;
  auto& truth = out.truth;
  const int width = std::max(4, static_cast<int>(std::to_string(spec.n_items).size()));
  for (int i = 0; i < spec.n_items; ++i) {
    truth.item_ids.push_back(padded(spec.id_prefix, 'i', i + 1, width));
    truth.difficulties.push_back(rng.uniform(spec.difficulty_lo, spec.difficulty_hi) + spec.location_shift);
  }
  const int uwidth = std::max(5, static_cast<int>(std::to_string(spec.n_users).size()));
  for (int u = 0; u < spec.n_users; ++u) {
    truth.user_ids.push_back(padded(spec.id_prefix, 'u', u + 1, uwidth));
    truth.abilities.push_back(rng.normal(0.0, spec.ability_sd) + spec.location_shift);
  }

  const int grade = spec.grade > 0 ? spec.grade : default_grade(spec.domain);
  const int per_session = spec.items_per_session == 0 ? spec.n_items : spec.items_per_session;
  constexpr std::int64_t kDay = 86400, kStep = 20;
  std::vector<int> order(static_cast<std::size_t>(spec.n_items));
  out.records.reserve(static_cast<std::size_t>(spec.n_users) * spec.sessions_per_user * per_session);
  for (int u = 0; u < spec.n_users; ++u) {
    const double theta = truth.abilities[static_cast<std::size_t>(u)];
    for (int s = 0; s < spec.sessions_per_user; ++s) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order.begin(), order.end());
      std::int64_t t = spec.start_time + static_cast<std::int64_t>(s) * kDay + u;
      for (int k = 0; k < per_session; ++k, t += kStep) {
        const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
        const double p = 1.0 / (1.0 + std::exp(-(theta - truth.difficulties[i])));
        out.records.push_back({truth.user_ids[static_cast<std::size_t>(u)], truth.item_ids[i],
                               rng.bernoulli(p) ? 1 : 0, t, spec.domain, grade});
      }
    }
  }
  return out;
}

ItemBank generate_synthetic_item_bank(const SyntheticTruth& truth, Domain domain, int grade,
                                      int time_limit_seconds, int closed_every) {
  std::vector<ItemBankEntry> entries;
  for (std::size_t i = 0; i < truth.item_ids.size(); ++i) {
    const bool closed = closed_every > 0 && (i + 1) % static_cast<std::size_t>(closed_every) == 0;
    entries.push_back({truth.item_ids[i], domain, grade > 0 ? grade : default_grade(domain),
                       time_limit_seconds, item_text(domain, static_cast<int>(i)), !closed});
  }
  return ItemBank(std::move(entries));
}

}  // namespace diffcal::data
