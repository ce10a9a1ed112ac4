#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "diffcal/data.hpp"
#include "diffcal/psychometrics.hpp"
#include "diffcal/stats.hpp"
#include "test_util.hpp"

using namespace diffcal;
using data::ResponseRecord;

namespace {

ResponseRecord rec(std::string user, std::string item, int correct, std::int64_t t, int grade = 3) {
  return {std::move(user), std::move(item), correct, t, Domain::addition, grade};
}

// Items I0..I5 answered by 301 users; X answered by only 300 of them.
std::vector<ResponseRecord> filter_fixture() {
  std::vector<ResponseRecord> out;
  for (int u = 0; u < 301; ++u) {
    const auto user = "U" + std::to_string(u);
    for (int i = 0; i < 6; ++i) out.push_back(rec(user, "I" + std::to_string(i), (u + i) % 2, 1000 + i));
    if (u < 300) out.push_back(rec(user, "X", u % 2, 2000));
  }
  for (int i = 0; i < 5; ++i) out.push_back(rec("five", "I" + std::to_string(i), 1, 3000 + i));
  for (int i = 0; i < 6; ++i) out.push_back(rec("six", "I" + std::to_string(i), 0, 3000 + i));
  out.push_back(rec("U0", "I0", 1, 5000, 4));  // wrong grade
  return out;
}

data::ItemBank bank_for(const std::vector<std::string>& ids, Domain d = Domain::addition) {
  std::vector<data::ItemBankEntry> e;
  for (const auto& id : ids) e.push_back({id, d, 3, 20, "text " + id, true});
  return data::ItemBank(e);
}

irt::RaschFit linear_fit(int n) {
  irt::RaschFit f;
  for (int i = 0; i < n; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "i%02d", i);
    f.item_ids.push_back(buf);
    f.expected_p.push_back(0.05 + 0.9 * i / (n - 1));
    f.difficulties.push_back(-f.expected_p.back());
  }
  return f;
}

}  // namespace

TEST(Filter, StrictThresholdsOnItemsAndUsers) {
  const auto records = filter_fixture();
  const auto kept = data::filter_responses(records, data::ItemBank{});
  std::set<std::string> items, users;
  for (const auto& r : kept) {
    items.insert(r.item_id);
    users.insert(r.user_id);
    EXPECT_EQ(r.grade, 3);
  }
  EXPECT_FALSE(items.count("X"));  // exactly 300 responses
  EXPECT_TRUE(items.count("I0"));
  EXPECT_FALSE(users.count("five"));
  EXPECT_TRUE(users.count("six"));
  EXPECT_EQ(kept.size(), 301u * 6 + 6);
}

TEST(Filter, Idempotent) {
  const auto once = data::filter_responses(filter_fixture(), data::ItemBank{});
  const auto twice = data::filter_responses(once, data::ItemBank{});
  EXPECT_EQ(once, twice);
}

TEST(Filter, KeepsCompleteSyntheticLogs) {
  data::SyntheticSpec spec;
  spec.n_items = 10;
  spec.n_users = 400;
  const auto logs = data::generate_synthetic_logs(spec);
  EXPECT_EQ(data::filter_responses(logs.records, data::ItemBank{}).size(), logs.records.size());
  EXPECT_EQ(logs.records.size(), 4000u);
}

TEST(Filter, EmptyDomainNamesTheStage) {
  std::vector<ResponseRecord> few{rec("u", "a", 1, 0), rec("u", "b", 0, 1)};
  try {
    data::filter_responses(few, data::ItemBank{});
    FAIL();
  } catch (const data::EmptyDomainError& e) {
    EXPECT_EQ(e.stage(), data::FilterStage::items);
    EXPECT_EQ(e.domain(), Domain::addition);
  }
  data::FilterConfig cfg;
  cfg.min_item_responses = 0;
  try {
    data::filter_responses(few, data::ItemBank{}, cfg);
    FAIL();
  } catch (const data::EmptyDomainError& e) {
    EXPECT_EQ(e.stage(), data::FilterStage::users);
  }
  cfg.min_user_tasks = 0;
  cfg.domain_grades[Domain::addition] = 9;
  try {
    data::filter_responses(few, data::ItemBank{}, cfg);
    FAIL();
  } catch (const data::EmptyDomainError& e) {
    EXPECT_EQ(e.stage(), data::FilterStage::grade);
  }
}

TEST(Sessionize, SingleSessionWeightOne) {
  std::vector<ResponseRecord> r;
  for (int i = 0; i < 6; ++i) r.push_back(rec("u", "i" + std::to_string(i), 1, 100 + 60 * i));
  const auto s = data::sessionize(r);
  ASSERT_EQ(s.matrix.num_persons(), 1u);
  EXPECT_EQ(s.matrix.persons[0], "u#1");
  EXPECT_EQ(s.matrix.weights[0], 1.0);
  EXPECT_EQ(s.person_users[0], "u");
}

TEST(Sessionize, ShortSessionsDroppedAndWeightsSplit) {
  std::vector<ResponseRecord> r;
  std::int64_t t = 0;
  auto session = [&](int n) {
    for (int i = 0; i < n; ++i) r.push_back(rec("u", "i" + std::to_string(i), i % 2, t += 10));
    t += 31 * 60;
  };
  session(6);
  session(7);
  session(3);
  const auto s = data::sessionize(r);
  ASSERT_EQ(s.matrix.num_persons(), 2u);
  EXPECT_EQ(s.matrix.weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(s.sessions_dropped, 1u);
  EXPECT_EQ(s.matrix.responses[0].size(), 6u);
  EXPECT_EQ(s.matrix.responses[1].size(), 7u);
}

TEST(Sessionize, GapOfExactlyThirtyMinutesContinuesTheSession) {
  std::vector<ResponseRecord> r;
  for (int i = 0; i < 5; ++i) r.push_back(rec("u", "i" + std::to_string(i), 1, i * 30 * 60));
  EXPECT_EQ(data::sessionize(r).matrix.num_persons(), 1u);
  r.back().timestamp += 1;
  EXPECT_EQ(data::sessionize(r).matrix.num_persons(), 0u);
}

TEST(Sessionize, FirstAttemptRetained) {
  std::vector<ResponseRecord> r{rec("u", "A", 0, 1), rec("u", "A", 1, 2), rec("u", "B", 1, 3), rec("u", "C", 1, 4),
                                rec("u", "D", 1, 5), rec("u", "E", 1, 6)};
  const auto s = data::sessionize(r);
  ASSERT_EQ(s.matrix.num_persons(), 1u);
  ASSERT_EQ(s.matrix.responses[0].size(), 5u);
  const auto a = std::find(s.matrix.items.begin(), s.matrix.items.end(), "A") - s.matrix.items.begin();
  for (const auto& x : s.matrix.responses[0]) {
    if (x.item == a) {
      EXPECT_EQ(x.correct, 0);
    }
  }
}

TEST(Sessionize, UsersWithoutSessionsAreCounted) {
  std::vector<ResponseRecord> r{rec("short", "A", 1, 1), rec("short", "B", 0, 2)};
  for (int i = 0; i < 5; ++i) r.push_back(rec("ok", "i" + std::to_string(i), 1, i));
  const auto s = data::sessionize(r);
  EXPECT_EQ(s.users_excluded, 1u);
  EXPECT_EQ(s.matrix.num_persons(), 1u);
}

TEST(Sessionize, WeightsSumToOnePerUser) {
  data::SyntheticSpec spec;
  spec.n_items = 30;
  spec.n_users = 50;
  spec.sessions_per_user = 3;
  spec.items_per_session = 8;
  const auto s = data::sessionize(data::generate_synthetic_logs(spec).records);
  std::map<std::string, double> total;
  for (std::size_t p = 0; p < s.matrix.num_persons(); ++p) total[s.person_users[p]] += s.matrix.weights[p];
  ASSERT_FALSE(total.empty());
  for (const auto& [u, w] : total) EXPECT_NEAR(w, 1.0, 1e-12) << u;
}

TEST(Sample, FifteenPerStratumAndDisjointAnchors) {
  const auto fit = linear_fit(80);
  const auto bank = bank_for(fit.item_ids);
  const auto s = data::stratified_sample(fit, bank, Domain::addition, 15, 9);
  ASSERT_EQ(s.items.size(), 60u);
  std::map<int, int> per;
  std::set<std::string> ids;
  for (const auto& it : s.items) {
    ++per[it.stratum];
    ids.insert(it.item_id);
  }
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(per[k], 15);
  EXPECT_EQ(ids.size(), 60u);
  EXPECT_FALSE(ids.count(s.anchors[0].item_id));
  EXPECT_FALSE(ids.count(s.anchors[1].item_id));
  EXPECT_EQ(s.anchors[0].stratum, 4);
  EXPECT_EQ(s.anchors[1].stratum, 1);
}

TEST(Sample, StrataFollowTheType7Percentiles) {
  const auto fit = linear_fit(80);
  const auto s = data::stratified_sample(fit, bank_for(fit.item_ids), Domain::addition, 15, 2);
  auto sorted = fit.expected_p;
  std::sort(sorted.begin(), sorted.end());
  // Direct percentile oracle: h = (n - 1) q, linear between order statistics.
  auto pct = [&](double q) {
    const double h = (sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    return sorted[lo] + (h - lo) * (sorted[std::min(lo + 1, sorted.size() - 1)] - sorted[lo]);
  };
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(s.borders[k], pct(0.25 * (k + 1)), 1e-15);
  for (const auto& it : s.items) {
    int expect = 4;
    for (int k = 2; k >= 0; --k)
      if (it.expected_p <= s.borders[k]) expect = k + 1;
    EXPECT_EQ(it.stratum, expect) << it.item_id;
  }
}

TEST(Sample, DeterministicAndSerializable) {
  const auto fit = linear_fit(80);
  const auto bank = bank_for(fit.item_ids);
  const auto a = data::stratified_sample(fit, bank, Domain::addition, 15, 4);
  const auto b = data::stratified_sample(fit, bank, Domain::addition, 15, 4);
  const auto c = data::stratified_sample(fit, bank, Domain::addition, 15, 5);
  EXPECT_EQ(data::serialize_sample(a), data::serialize_sample(b));
  EXPECT_NE(data::serialize_sample(a), data::serialize_sample(c));
  const auto text = data::serialize_sample(a);
  EXPECT_EQ(data::serialize_sample(data::parse_sample(text)), text);
}

TEST(Sample, ClosedItemsNeverDrawnAndShortStrataReported) {
  const auto fit = linear_fit(80);
  std::vector<data::ItemBankEntry> e;
  for (std::size_t i = 0; i < fit.item_ids.size(); ++i)
    e.push_back({fit.item_ids[i], Domain::addition, 3, 20, "t", i % 10 != 0});
  const data::ItemBank bank(e);
  const auto s = data::stratified_sample(fit, bank, Domain::addition, 10, 1);
  for (const auto& it : s.items) EXPECT_TRUE(bank.at(it.item_id).open_ended);
  try {
    data::stratified_sample(fit, bank, Domain::addition, 19, 1);
    FAIL();
  } catch (const data::InsufficientStratumError& err) {
    EXPECT_GE(err.stratum(), 1);
    EXPECT_LT(err.available(), 20u);
  }
}

TEST(Synthetic, SymmetricModelGivesHalfCorrect) {
  data::SyntheticSpec spec;
  spec.n_items = 100;
  spec.n_users = 1000;
  spec.difficulty_lo = spec.difficulty_hi = 0.0;
  spec.ability_sd = 1e-9;
  const auto logs = data::generate_synthetic_logs(spec);
  ASSERT_EQ(logs.records.size(), 100000u);
  double correct = 0;
  for (const auto& r : logs.records) correct += r.correct;
  EXPECT_NEAR(correct / logs.records.size(), 0.5, 0.02);
}

TEST(Synthetic, Deterministic) {
  data::SyntheticSpec spec;
  spec.n_items = 12;
  spec.n_users = 30;
  spec.seed = 4;
  EXPECT_EQ(data::generate_synthetic_logs(spec).records, data::generate_synthetic_logs(spec).records);
}

TEST(Io, ResponseLogRoundTrip) {
  test::TempDir dir;
  data::SyntheticSpec spec;
  spec.n_items = 8;
  spec.n_users = 10;
  const auto logs = data::generate_synthetic_logs(spec);
  data::write_response_log(dir / "log.csv", logs.records);
  EXPECT_EQ(data::read_response_log(dir / "log.csv"), logs.records);
}

TEST(Io, IsoTimestamps) {
  EXPECT_EQ(data::parse_timestamp("2017-09-01T00:00:00Z"), 1504224000);
  EXPECT_EQ(data::parse_timestamp("2017-09-01 00:01:05"), 1504224065);
  EXPECT_EQ(data::parse_timestamp("1504224000"), 1504224000);
  EXPECT_THROW(data::parse_timestamp("yesterday"), std::exception);
}

TEST(Io, ItemBankKeepsRawText) {
  test::TempDir dir;
  const std::string html = "30 : 0,6<br><small>denk aan \"30 : 6\", = 5</small>\nnext line";
  const data::ItemBank bank({{"a", Domain::division, 7, 30, html, true}, {"b", Domain::addition, 3, 20, "1 + 1", false}});
  data::write_item_bank(dir / "bank.csv", bank);
  const auto back = data::read_item_bank(dir / "bank.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("a").text, html);
  EXPECT_EQ(back.at("a").domain, Domain::division);
  EXPECT_FALSE(back.at("b").open_ended);
}

TEST(Io, ResponseMatrixAndFitRoundTrip) {
  test::TempDir dir;
  data::SyntheticSpec spec;
  spec.n_items = 10;
  spec.n_users = 60;
  spec.sessions_per_user = 2;
  spec.items_per_session = 6;
  const auto s = data::sessionize(data::generate_synthetic_logs(spec).records);
  data::write_response_matrix(dir / "m.csv", s);
  const auto back = data::read_response_matrix(dir / "m.csv");
  EXPECT_EQ(back.matrix.persons, s.matrix.persons);
  EXPECT_EQ(back.matrix.items, s.matrix.items);
  EXPECT_EQ(back.matrix.weights, s.matrix.weights);
  ASSERT_EQ(back.matrix.responses.size(), s.matrix.responses.size());
  for (std::size_t p = 0; p < s.matrix.responses.size(); ++p)
    for (std::size_t k = 0; k < s.matrix.responses[p].size(); ++k) {
      EXPECT_EQ(back.matrix.responses[p][k].item, s.matrix.responses[p][k].item);
      EXPECT_EQ(back.matrix.responses[p][k].correct, s.matrix.responses[p][k].correct);
    }

  const auto fit = irt::rasch_em_fit(s.matrix);
  data::write_rasch_fit(dir / "fit.csv", dir / "fit.json", fit);
  const auto f2 = data::read_rasch_fit(dir / "fit.csv", dir / "fit.json");
  EXPECT_EQ(f2.item_ids, fit.item_ids);
  EXPECT_EQ(f2.difficulties, fit.difficulties);
  EXPECT_EQ(f2.expected_p, fit.expected_p);
  EXPECT_EQ(f2.ability.sd, fit.ability.sd);
  EXPECT_EQ(f2.converged, fit.converged);
  EXPECT_EQ(f2.iterations, fit.iterations);
}
