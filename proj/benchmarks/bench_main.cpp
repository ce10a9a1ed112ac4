#include <benchmark/benchmark.h>

#include <cmath>

#include "diffcal/analysis.hpp"
#include "diffcal/bradley_terry.hpp"
#include "diffcal/psychometrics.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;

namespace {

irt::WeightedResponseMatrix simulate(int persons, int items, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> b(items);
  for (auto& x : b) x = rng.uniform(-2, 2);
  irt::WeightedResponseMatrix m;
  for (int i = 0; i < items; ++i) m.items.push_back("i" + std::to_string(i));
  for (int p = 0; p < persons; ++p) {
    const double theta = rng.normal();
    m.persons.push_back("p" + std::to_string(p));
    m.weights.push_back(1.0);
    std::vector<irt::Response> row;
    for (int i = 0; i < items; ++i)
      row.push_back({static_cast<std::uint32_t>(i),
                     static_cast<std::uint8_t>(rng.uniform01() < 1 / (1 + std::exp(b[i] - theta)))});
    m.responses.push_back(std::move(row));
  }
  return m;
}

void BM_RaschFit(benchmark::State& state) {
  const auto m = simulate(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 42);
  for (auto _ : state) benchmark::DoNotOptimize(irt::rasch_em_fit(m));
}
BENCHMARK(BM_RaschFit)->Args({500, 40})->Args({2000, 60})->Unit(benchmark::kMillisecond);

void BM_ExpectedP(benchmark::State& state) {
  double b = -3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(irt::expected_proportion_correct(b, 1.1));
    b = b > 3 ? -3 : b + 0.01;
  }
}
BENCHMARK(BM_ExpectedP);

void BM_BradleyTerry(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> l(n);
  for (auto& x : l) x = rng.normal();
  bt::WinMatrix w(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = 1 / (1 + std::exp(l[j] - l[i]));
      const auto c = static_cast<double>(static_cast<std::int64_t>(std::nearbyint(p * 1e6)));
      w.set(i, j, c);
      w.set(j, i, 1e6 - c);
    }
  for (auto _ : state) benchmark::DoNotOptimize(bt::bt_fit(w));
}
BENCHMARK(BM_BradleyTerry)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_Bootstrap(benchmark::State& state) {
  Rng rng(9);
  std::vector<analysis::DomainData> data;
  for (Domain d : kAllDomains) {
    analysis::DomainData dd;
    dd.domain = d;
    for (int i = 0; i < 60; ++i) {
      dd.item_ids.push_back("i" + std::to_string(i));
      dd.criterion.push_back(rng.normal());
    }
    for (int c = 0; c < 8; ++c) {
      std::vector<double> v;
      for (double x : dd.criterion) v.push_back(x + rng.normal());
      dd.conditions["c" + std::to_string(c)] = v;
    }
    data.push_back(std::move(dd));
  }
  const std::vector<analysis::GroupSpec> groups{{"all", {"c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7"}, {}}};
  analysis::BootstrapConfig cfg;
  cfg.iterations = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(analysis::bootstrap_analysis(data, groups, {}, cfg));
}
BENCHMARK(BM_Bootstrap)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
