#include "fade/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fade/errors.hpp"

namespace fade {

namespace {

constexpr std::uint64_t kTagEvalNegatives = 11;

double ideal_dcg(int relevant_count, int k) {
  double dcg = 0.0;
  for (int r = 1; r <= std::min(relevant_count, k); ++r)
    dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg;
}

void accumulate(MetricTriple& acc, const MetricTriple& x) {
  acc.ndcg += x.ndcg;
  acc.f1 += x.f1;
  acc.hit += x.hit;
}

MetricTriple divide(const MetricTriple& acc, int n) {
  const double inv = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  return {acc.ndcg * inv, acc.f1 * inv, acc.hit * inv};
}

}  // namespace

void EvalConfig::validate() const {
  if (k < 1) throw ConfigError("eval: K must be >= 1");
  if (num_eval_negatives < 1) throw ConfigError("eval: need at least one negative");
}

MetricTriple exact_metrics(std::vector<ScoredCandidate> candidates, int k) {
  if (candidates.empty()) throw std::invalid_argument("exact_metrics: empty candidate list");
  int relevant_total = 0;
  for (const auto& c : candidates) relevant_total += c.relevant ? 1 : 0;
  if (relevant_total == 0) throw std::invalid_argument("exact_metrics: no relevant candidate");

  std::sort(candidates.begin(), candidates.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });

  const int top = std::min<int>(k, static_cast<int>(candidates.size()));
  double dcg = 0.0;
  int hits = 0;
  for (int r = 1; r <= top; ++r) {
    if (candidates[static_cast<std::size_t>(r - 1)].relevant) {
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      ++hits;
    }
  }

  MetricTriple m;
  m.ndcg = dcg / ideal_dcg(relevant_total, k);
  const double precision = static_cast<double>(hits) / static_cast<double>(k);
  const double recall = static_cast<double>(hits) / static_cast<double>(relevant_total);
  m.f1 = hits > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  m.hit = hits > 0 ? 1.0 : 0.0;
  return m;
}

double performance_disparity(double group0_mean, double group1_mean) {
  return group0_mean - group1_mean;
}

std::vector<ItemId> build_eval_candidates(UserId user, const std::vector<ItemId>& test_positives,
                                          const std::vector<ItemId>& history, int num_items,
                                          int period, const EvalConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {kTagEvalNegatives, static_cast<std::uint64_t>(period),
                                   static_cast<std::uint64_t>(user)});
  std::vector<ItemId> candidates = test_positives;
  auto negatives = sample_negatives(rng, cfg.num_eval_negatives, history, num_items);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  return candidates;
}

Evaluator::Evaluator(const SplitDataset& split, EvalConfig cfg) : split_(split), cfg_(cfg) {
  cfg_.validate();
  for (const auto& period : split_.periods) {
    for (const auto& [user, items] : period.per_user_positives) {
      auto& hist = full_history_[user];
      hist.insert(hist.end(), items.begin(), items.end());
    }
  }
  for (auto& [user, hist] : full_history_) {
    std::sort(hist.begin(), hist.end());
    hist.erase(std::unique(hist.begin(), hist.end()), hist.end());
  }
}

PeriodMetrics Evaluator::evaluate(const ModelParams& params, int t) const {
  const int last = static_cast<int>(split_.periods.size()) - 1;
  if (t < 0 || t >= last) throw ConfigError("evaluate: period out of range");
  const int window_end = cfg_.task == EvalTask::Next ? t + 1 : last;

  // Per-user relevant items inside the test window.
  std::unordered_map<UserId, std::vector<ItemId>> test_positives;
  for (int w = t + 1; w <= window_end; ++w) {
    for (const auto& [user, items] : split_.periods[static_cast<std::size_t>(w)].per_user_positives) {
      auto& dst = test_positives[user];
      dst.insert(dst.end(), items.begin(), items.end());
    }
  }
  if (test_positives.empty()) throw ConfigError("evaluate: empty test window");

  // Deterministic user order regardless of hash-map layout.
  std::vector<UserId> users;
  users.reserve(test_positives.size());
  for (const auto& [user, _] : test_positives) users.push_back(user);
  std::sort(users.begin(), users.end());

  PeriodMetrics out;
  out.period = t;
  MetricTriple sum_all, sum_g0, sum_g1;
  std::vector<ScoredCandidate> scored;
  for (UserId user : users) {
    auto& positives = test_positives[user];
    std::sort(positives.begin(), positives.end());
    positives.erase(std::unique(positives.begin(), positives.end()), positives.end());
    const auto& history = full_history_.at(user);
    const auto candidates = build_eval_candidates(user, positives, history, split_.num_items, t, cfg_);
    scored.clear();
    scored.reserve(candidates.size());
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const ItemId item = candidates[j];
      scored.push_back({item, score(params, user, item), j < positives.size()});
    }
    const MetricTriple m = exact_metrics(scored, cfg_.k);

    accumulate(sum_all, m);
    ++out.evaluated_users;
    if (split_.user_attribute[static_cast<std::size_t>(user)] == 0) {
      accumulate(sum_g0, m);
      ++out.group0.user_count;
    } else {
      accumulate(sum_g1, m);
      ++out.group1.user_count;
    }
  }

  out.excluded_users = split_.num_users - out.evaluated_users;
  out.overall = divide(sum_all, out.evaluated_users);
  out.group0.mean = divide(sum_g0, out.group0.user_count);
  out.group1.mean = divide(sum_g1, out.group1.user_count);
  if (out.group0.user_count > 0 && out.group1.user_count > 0) {
    out.pd = MetricTriple{performance_disparity(out.group0.mean.ndcg, out.group1.mean.ndcg),
                          performance_disparity(out.group0.mean.f1, out.group1.mean.f1),
                          performance_disparity(out.group0.mean.hit, out.group1.mean.hit)};
  }
  return out;
}

}  // namespace fade
