#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fade/errors.hpp"
#include "fade/evaluation.hpp"
#include "fade/rng.hpp"

using namespace fade;

namespace {

// Brute-force re-implementation used as the oracle: literal formulas over a
// fully sorted list.
struct OracleResult {
  double ndcg, f1, hit;
};

OracleResult metrics_oracle(std::vector<ScoredCandidate> cs, int k) {
  std::sort(cs.begin(), cs.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  });
  int total_relevant = 0;
  for (const auto& c : cs) total_relevant += c.relevant ? 1 : 0;
  double dcg = 0.0, idcg = 0.0;
  int hits = 0;
  for (int r = 1; r <= std::min<int>(k, static_cast<int>(cs.size())); ++r) {
    if (cs[static_cast<std::size_t>(r - 1)].relevant) {
      dcg += 1.0 / std::log2(r + 1.0);
      ++hits;
    }
  }
  for (int r = 1; r <= std::min(total_relevant, k); ++r) idcg += 1.0 / std::log2(r + 1.0);
  const double p = static_cast<double>(hits) / k;
  const double rec = static_cast<double>(hits) / total_relevant;
  return {dcg / idcg, hits > 0 ? 2.0 * p * rec / (p + rec) : 0.0, hits > 0 ? 1.0 : 0.0};
}

// Small two-group log: even users are group 0, odd users group 1.
InteractionLog two_group_log(int users, int items, int per_user, Rng& rng) {
  InteractionLog log;
  log.user_count = users;
  log.item_count = items;
  for (int u = 0; u < users; ++u) {
    log.original_user_ids.push_back(u);
    log.user_attribute.push_back(static_cast<std::uint8_t>(u % 2));
  }
  for (int i = 0; i < items; ++i) log.original_item_ids.push_back(i);
  std::int64_t ts = 0;
  for (int u = 0; u < users; ++u) {
    for (int j = 0; j < per_user; ++j) {
      log.records.push_back({u, static_cast<ItemId>(rng.uniform_int(items)), 5, ts++, 
                             static_cast<std::uint8_t>(u % 2)});
    }
  }
  return log;
}

}  // namespace

TEST_CASE("worked metric values") {
  // single relevant ranked first
  std::vector<ScoredCandidate> first = {{0, 5.0, true}, {1, 4.0, false}, {2, 3.0, false}};
  auto m = exact_metrics(first, 20);
  CHECK(m.ndcg == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.hit == 1.0);

  // single relevant ranked third at K=20: NDCG = 1/log2(4) = 0.5
  std::vector<ScoredCandidate> third = {{0, 5.0, false}, {1, 4.0, false}, {2, 3.0, true}, {3, 2.0, false}};
  CHECK(exact_metrics(third, 20).ndcg == doctest::Approx(0.5).epsilon(1e-15));

  // 5 relevant all inside the top 20: F1 = 2*(5/20)*1 / ((5/20)+1) = 0.4
  std::vector<ScoredCandidate> five;
  for (int i = 0; i < 25; ++i) five.push_back({static_cast<ItemId>(i), 100.0 - i, i < 5});
  CHECK(exact_metrics(five, 20).f1 == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("ties break toward the lower item id") {
  std::vector<ScoredCandidate> tied = {{7, 1.0, true}, {3, 1.0, false}};
  // item 3 wins the tie, so the relevant item 7 sits at rank 2
  CHECK(exact_metrics(tied, 1).hit == 0.0);
  CHECK(exact_metrics(tied, 2).hit == 1.0);
}

TEST_CASE("metrics agree with the brute-force oracle on random instances") {
  Rng rng(2025);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.uniform_int(40);
    std::vector<ScoredCandidate> cs;
    int relevant = 0;
    for (int i = 0; i < n; ++i) {
      const bool rel = rng.uniform_int(4) == 0;
      relevant += rel ? 1 : 0;
      // coarse scores force ties to exercise the id tie-break
      cs.push_back({static_cast<ItemId>(i), std::round(rng.uniform_double() * 8.0), rel});
    }
    if (relevant == 0) cs[static_cast<std::size_t>(rng.uniform_int(n))].relevant = true;
    const int k = 1 + rng.uniform_int(25);
    const auto got = exact_metrics(cs, k);
    const auto want = metrics_oracle(cs, k);
    CHECK(std::abs(got.ndcg - want.ndcg) <= 1e-12);
    CHECK(std::abs(got.f1 - want.f1) <= 1e-12);
    CHECK(std::abs(got.hit - want.hit) <= 1e-12);
    CHECK(got.ndcg >= 0.0);
    CHECK(got.ndcg <= 1.0);
    CHECK(got.f1 >= 0.0);
    CHECK(got.f1 <= 1.0);
  }
}

TEST_CASE("performance disparity is a signed difference") {
  CHECK(performance_disparity(0.8, 0.75) == doctest::Approx(0.05));
  CHECK(performance_disparity(0.5, 0.5) == doctest::Approx(0.0));
  CHECK(performance_disparity(0.6, 0.7) == doctest::Approx(-0.1));
}

TEST_CASE("eval candidates: one positive plus the configured negatives") {
  EvalConfig cfg;
  cfg.num_eval_negatives = 100;
  cfg.seed = 7;
  std::vector<ItemId> positives = {42};
  std::vector<ItemId> history = {3, 42, 99};
  const auto candidates = build_eval_candidates(5, positives, history, 500, 2, cfg);
  CHECK(candidates.size() == 101);
  CHECK(candidates[0] == 42);
  std::set<ItemId> negs(candidates.begin() + 1, candidates.end());
  CHECK(negs.size() == 100);  // distinct
  for (ItemId i : negs) {
    CHECK(!std::binary_search(history.begin(), history.end(), i));
    CHECK(i != 42);
  }
  // keyed by (user, period, seed): same inputs reproduce the same draw
  CHECK(build_eval_candidates(5, positives, history, 500, 2, cfg) == candidates);
  CHECK(build_eval_candidates(5, positives, history, 500, 3, cfg) != candidates);
}

TEST_CASE("evaluator means match a per-user recomputation") {
  Rng rng(99);
  auto log = two_group_log(20, 60, 12, rng);
  auto split = build_split(log, 0.5, 0.5, 3);
  EvalConfig cfg;
  cfg.k = 5;
  cfg.num_eval_negatives = 20;
  cfg.task = EvalTask::Remain;
  cfg.seed = 31;
  Evaluator evaluator(split, cfg);

  Rng prng(1);
  auto params = init_params(prng, split.num_users, split.num_items, 8, 0.3);
  const int t = 1;
  const auto report = evaluator.evaluate(params, t);

  // independent recomputation straight from the split
  MetricTriple g0{}, g1{};
  int n0 = 0, n1 = 0;
  for (UserId u = 0; u < split.num_users; ++u) {
    std::set<ItemId> pos_set, hist_set;
    for (std::size_t w = 0; w < split.periods.size(); ++w) {
      const auto& per = split.periods[w].per_user_positives;
      auto it = per.find(u);
      if (it == per.end()) continue;
      hist_set.insert(it->second.begin(), it->second.end());
      if (static_cast<int>(w) > t) pos_set.insert(it->second.begin(), it->second.end());
    }
    if (pos_set.empty()) continue;
    std::vector<ItemId> positives(pos_set.begin(), pos_set.end());
    std::vector<ItemId> history(hist_set.begin(), hist_set.end());
    auto candidates = build_eval_candidates(u, positives, history, split.num_items, t, cfg);
    std::vector<ScoredCandidate> scored;
    for (std::size_t j = 0; j < candidates.size(); ++j)
      scored.push_back({candidates[j], score(params, u, candidates[j]), j < positives.size()});
    const auto m = exact_metrics(scored, cfg.k);
    if (split.user_attribute[static_cast<std::size_t>(u)] == 0) {
      g0.ndcg += m.ndcg; g0.f1 += m.f1; g0.hit += m.hit; ++n0;
    } else {
      g1.ndcg += m.ndcg; g1.f1 += m.f1; g1.hit += m.hit; ++n1;
    }
  }
  REQUIRE(n0 == report.group0.user_count);
  REQUIRE(n1 == report.group1.user_count);
  CHECK(report.group0.mean.ndcg == doctest::Approx(g0.ndcg / n0).epsilon(1e-12));
  CHECK(report.group1.mean.f1 == doctest::Approx(g1.f1 / n1).epsilon(1e-12));
  CHECK(report.overall.hit == doctest::Approx((g0.hit + g1.hit) / (n0 + n1)).epsilon(1e-12));
  REQUIRE(report.pd.has_value());
  CHECK(report.pd->ndcg == doctest::Approx(g0.ndcg / n0 - g1.ndcg / n1).epsilon(1e-12));
  CHECK(report.pd->hit == doctest::Approx(g0.hit / n0 - g1.hit / n1).epsilon(1e-12));
  CHECK(report.evaluated_users == n0 + n1);
}

TEST_CASE("task-N and task-R coincide at the second-to-last period") {
  Rng rng(3);
  auto log = two_group_log(10, 40, 10, rng);
  auto split = build_split(log, 0.5, 0.5, 3);
  Rng prng(2);
  auto params = init_params(prng, split.num_users, split.num_items, 4, 0.2);

  EvalConfig remain;
  remain.k = 5;
  remain.num_eval_negatives = 15;
  remain.task = EvalTask::Remain;
  EvalConfig next = remain;
  next.task = EvalTask::Next;

  const int t = split.dynamic_periods() - 1;  // test window = last period for both
  const auto a = Evaluator(split, remain).evaluate(params, t);
  const auto b = Evaluator(split, next).evaluate(params, t);
  CHECK(a.overall.ndcg == doctest::Approx(b.overall.ndcg).epsilon(1e-15));
  CHECK(a.overall.f1 == doctest::Approx(b.overall.f1).epsilon(1e-15));
  CHECK(a.evaluated_users == b.evaluated_users);
}

TEST_CASE("single-group data leaves PD undefined") {
  Rng rng(8);
  auto log = two_group_log(10, 40, 10, rng);
  for (auto& a : log.user_attribute) a = 0;
  for (auto& r : log.records) r.attribute = 0;
  auto split = build_split(log, 0.5, 0.5, 2);
  Rng prng(2);
  auto params = init_params(prng, split.num_users, split.num_items, 4, 0.2);
  EvalConfig cfg;
  cfg.k = 5;
  cfg.num_eval_negatives = 10;
  const auto report = Evaluator(split, cfg).evaluate(params, 0);
  CHECK_FALSE(report.pd.has_value());
  CHECK(report.group1.user_count == 0);
}

TEST_CASE("out-of-range period is rejected") {
  Rng rng(3);
  auto log = two_group_log(6, 30, 8, rng);
  auto split = build_split(log, 0.5, 0.5, 2);
  Rng prng(1);
  auto params = init_params(prng, split.num_users, split.num_items, 4, 0.2);
  EvalConfig cfg;
  Evaluator ev(split, cfg);
  CHECK_THROWS_AS(ev.evaluate(params, split.dynamic_periods()), ConfigError);
  CHECK_THROWS_AS(ev.evaluate(params, -1), ConfigError);
}
