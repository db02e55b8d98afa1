#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fade/data.hpp"
#include "fade/model.hpp"

namespace fade {

enum class EvalTask { Remain, Next };

struct EvalConfig {
  int k = 20;
  int num_eval_negatives = 100;
  EvalTask task = EvalTask::Remain;
  std::uint64_t seed = 42;

  void validate() const;
};

struct MetricTriple {
  double ndcg = 0.0;
  double f1 = 0.0;
  double hit = 0.0;
};

struct GroupMetrics {
  MetricTriple mean;
  int user_count = 0;
};

// Metrics for one evaluated period. PD is group0 minus group1 per metric,
// undefined when either group has no evaluated user.
struct PeriodMetrics {
  int period = 0;
  MetricTriple overall;
  GroupMetrics group0, group1;
  std::optional<MetricTriple> pd;
  int evaluated_users = 0;
  int excluded_users = 0;  // users with nothing to rank in the test window
};

struct ScoredCandidate {
  ItemId item;
  double score;
  bool relevant;
};

// Exact top-K metrics over one candidate list: descending score, ties broken
// by lower item id. NDCG uses binary gains with log2(rank+1) discounts and an
// ideal DCG truncated at min(K, #relevant).
MetricTriple exact_metrics(std::vector<ScoredCandidate> candidates, int k);

double performance_disparity(double group0_mean, double group1_mean);

// Test-window candidate assembly: the user's test positives plus
// num_eval_negatives items drawn outside the user's entire interaction
// history. Draws are keyed by (user, period, seed) so every strategy is
// scored on identical candidate sets.
std::vector<ItemId> build_eval_candidates(UserId user, const std::vector<ItemId>& test_positives,
                                          const std::vector<ItemId>& history, int num_items,
                                          int period, const EvalConfig& cfg);

// Shared evaluation state: per-user full histories (train and test, all
// periods) and group labels. Read-only and reusable across strategies.
class Evaluator {
 public:
  Evaluator(const SplitDataset& split, EvalConfig cfg);

  // Evaluates the model trained through period t on the configured task.
  // Task-R tests on periods t+1..T, Task-N on period t+1 alone.
  PeriodMetrics evaluate(const ModelParams& params, int t) const;

  const EvalConfig& config() const { return cfg_; }

 private:
  const SplitDataset& split_;
  EvalConfig cfg_;
  std::unordered_map<UserId, std::vector<ItemId>> full_history_;
};

}  // namespace fade
