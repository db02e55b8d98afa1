#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fade/errors.hpp"
#include "fade/experiment.hpp"
#include "fade/trainer.hpp"

using namespace fade;

namespace {

SplitDataset planted_split(int users = 120, int items = 40, int periods = 3,
                           double disparity = 0.7, std::uint64_t seed = 5) {
  SyntheticSpec spec;
  spec.users = users;
  spec.items = items;
  spec.periods = periods;
  spec.disparity = disparity;
  spec.group1_fraction = 0.4;
  spec.interactions_per_user = 20;
  spec.clusters = 5;
  const auto log = generate_synthetic(spec, seed);
  return build_split(log, 0.5, 0.5, periods);
}

HyperParams small_hp() {
  HyperParams hp;
  hp.dim = 8;
  hp.epochs_pretrain = 4;
  hp.epochs_update = 3;
  hp.batch_size = 64;
  hp.mu = 3;
  hp.n_neg = 2;
  hp.lambda = 1.0;
  hp.seed = 99;
  return hp;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  return a.user_emb == b.user_emb && a.item_emb == b.item_emb;
}

}  // namespace

TEST_CASE("strategy parsing and labels") {
  auto s = parse_strategy("fade:lambda=2");
  CHECK(s.base == BaseStrategy::Finetune);
  CHECK(s.fair == FairMode::Fade);
  REQUIRE(s.lambda_override.has_value());
  CHECK(*s.lambda_override == doctest::Approx(2.0));
  CHECK(s.label() == "fade:lambda=2");

  CHECK(parse_strategy("retrain-fair").fair == FairMode::Fade);
  CHECK(parse_strategy("fade-abs").fair == FairMode::FadeAbs);
  CHECK(parse_strategy("finetune:restart=3").restart_every == 3);
  CHECK(parse_strategy(parse_strategy("retrain-fair-abs").label()).fair == FairMode::FadeAbs);
  CHECK_THROWS_AS(parse_strategy("nonsense"), ConfigError);
  CHECK_THROWS_AS(parse_strategy("finetune:restart=1"), ConfigError);
  CHECK_THROWS_AS(parse_strategy("fade:lambda=-1"), ConfigError);
}

TEST_CASE("hyperparameter validation") {
  HyperParams hp;
  hp.lambda = -0.5;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = HyperParams{};
  hp.tau = 0.0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = HyperParams{};
  hp.batch_size = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
}

TEST_CASE("lambda = 0 fade reproduces plain fine-tuning bit-exactly") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy plain{BaseStrategy::Finetune, FairMode::None, {}, {}};
  Strategy fade0{BaseStrategy::Finetune, FairMode::Fade, {}, 0.0};
  const auto a = run_strategy(plain, split, hp);
  const auto b = run_strategy(fade0, split, hp);
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  for (std::size_t t = 0; t < a.checkpoints.size(); ++t)
    CHECK(same_params(a.checkpoints[t], b.checkpoints[t]));
}

TEST_CASE("zero update epochs leave parameters unchanged") {
  const auto split = planted_split();
  auto hp = small_hp();
  hp.epochs_update = 0;
  Strategy s{BaseStrategy::Finetune, FairMode::Fade, {}, {}};
  const auto traj = run_strategy(s, split, hp);
  for (std::size_t t = 1; t < traj.checkpoints.size(); ++t)
    CHECK(same_params(traj.checkpoints[t], traj.checkpoints[0]));
}

TEST_CASE("training is deterministic per seed") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy s{BaseStrategy::Finetune, FairMode::Fade, {}, {}};
  const auto a = run_strategy(s, split, hp);
  const auto b = run_strategy(s, split, hp);
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  for (std::size_t t = 0; t < a.checkpoints.size(); ++t)
    CHECK(same_params(a.checkpoints[t], b.checkpoints[t]));
  auto hp2 = hp;
  hp2.seed = 123456;
  const auto c = run_strategy(s, split, hp2);
  CHECK_FALSE(same_params(a.checkpoints.back(), c.checkpoints.back()));
}

TEST_CASE("the pretrain cache is bit-transparent") {
  const auto split = planted_split();
  const auto hp = small_hp();
  PretrainCache cache;
  Strategy fade{BaseStrategy::Finetune, FairMode::Fade, {}, 1.0};
  Strategy fine{BaseStrategy::Finetune, FairMode::None, {}, {}};
  const auto warm = run_strategy(fine, split, hp, &cache);
  CHECK(cache.entries.size() == 1);
  const auto cached = run_strategy(fade, split, hp, &cache);   // hits the cache
  CHECK(cache.entries.size() == 1);
  const auto uncached = run_strategy(fade, split, hp, nullptr);
  REQUIRE(cached.checkpoints.size() == uncached.checkpoints.size());
  for (std::size_t t = 0; t < cached.checkpoints.size(); ++t)
    CHECK(same_params(cached.checkpoints[t], uncached.checkpoints[t]));
  CHECK(same_params(warm.checkpoints[0], cached.checkpoints[0]));
}

TEST_CASE("fairness training drags the batch-level DPD down") {
  SyntheticSpec spec;
  spec.users = 1200;
  spec.items = 300;
  spec.periods = 2;
  spec.disparity = 0.4;
  spec.group1_fraction = 0.3;
  spec.group1_interaction_scale = 0.5;
  spec.interactions_per_user = 40;
  spec.clusters = 8;
  const auto split = build_split(generate_synthetic(spec, 42), 0.5, 0.5, 2);

  HyperParams hp;
  hp.dim = 16;
  hp.epochs_pretrain = 50;  // a converged model so the planted disparity shows
  hp.epochs_update = 10;
  hp.lambda = 0.5;
  hp.tau = 1.0;
  hp.mu = 4;
  hp.n_neg = 4;
  hp.batch_size = 1024;
  hp.seed = 42;

  Strategy fade{BaseStrategy::Finetune, FairMode::Fade, {}, {}};
  const auto traj = run_strategy(fade, split, hp);
  const auto& dpds = traj.period_logs[1].epoch_mean_dpd;
  REQUIRE(dpds.size() == 10);
  CHECK(dpds.front() > 0.01);  // disparity was actually planted
  CHECK(std::abs(dpds.back()) < std::abs(dpds.front()));
}

TEST_CASE("the abs fairness variant trains and differs from the smooth one") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy fade{BaseStrategy::Finetune, FairMode::Fade, {}, 2.0};
  Strategy fade_abs{BaseStrategy::Finetune, FairMode::FadeAbs, {}, 2.0};
  const auto a = run_strategy(fade, split, hp);
  const auto b = run_strategy(fade_abs, split, hp);
  CHECK_FALSE(same_params(a.checkpoints.back(), b.checkpoints.back()));
  CHECK_FALSE(b.period_logs[1].epoch_mean_dpd.empty());
  // abs loss values are floored at ln 2 times lambda above the BPR part; just
  // confirm finite losses were logged
  for (double loss : b.period_logs[1].epoch_losses) CHECK(std::isfinite(loss));
}

TEST_CASE("pretrain strategy freezes every checkpoint") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy s{BaseStrategy::Pretrain, FairMode::None, {}, {}};
  const auto traj = run_strategy(s, split, hp);
  REQUIRE(traj.checkpoints.size() == static_cast<std::size_t>(split.dynamic_periods()));
  for (std::size_t t = 1; t < traj.checkpoints.size(); ++t)
    CHECK(same_params(traj.checkpoints[t], traj.checkpoints[0]));
}

TEST_CASE("retrain at period zero equals pretraining") {
  const auto split = planted_split();
  const auto hp = small_hp();
  ModelParams params;
  OptimizerState state;
  PeriodLog log;
  retrain(params, state, split, 0, hp, FairMode::None, 0.0, log);
  Strategy s{BaseStrategy::Pretrain, FairMode::None, {}, {}};
  const auto traj = run_strategy(s, split, hp);
  CHECK(same_params(params, traj.checkpoints[0]));
}

TEST_CASE("retrain is deterministic") {
  const auto split = planted_split();
  const auto hp = small_hp();
  ModelParams p1, p2;
  OptimizerState s1, s2;
  PeriodLog l1, l2;
  retrain(p1, s1, split, 2, hp, FairMode::Fade, 0.7, l1);
  retrain(p2, s2, split, 2, hp, FairMode::Fade, 0.7, l2);
  CHECK(same_params(p1, p2));
}

TEST_CASE("a restart interval past the horizon is plain fine-tuning") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy plain{BaseStrategy::Finetune, FairMode::Fade, {}, {}};
  Strategy never{BaseStrategy::Finetune, FairMode::Fade, split.dynamic_periods() + 1, {}};
  const auto a = run_strategy(plain, split, hp);
  const auto b = run_strategy(never, split, hp);
  for (std::size_t t = 0; t < a.checkpoints.size(); ++t)
    CHECK(same_params(a.checkpoints[t], b.checkpoints[t]));
  for (const auto& log : b.period_logs) CHECK_FALSE(log.restarted);
}

TEST_CASE("restart periods perform a full retrain and resume") {
  const auto split = planted_split(150, 40, 4, 0.6, 21);
  const auto hp = small_hp();
  Strategy restart{BaseStrategy::Finetune, FairMode::None, 2, {}};
  const auto traj = run_strategy(restart, split, hp);
  REQUIRE(traj.period_logs.size() == 4);
  CHECK_FALSE(traj.period_logs[1].restarted);
  CHECK(traj.period_logs[2].restarted);
  CHECK_FALSE(traj.period_logs[3].restarted);

  // the restarted checkpoint equals a retrain over periods 0..2
  ModelParams params;
  OptimizerState state;
  PeriodLog log;
  retrain(params, state, split, 2, hp, FairMode::None, 0.0, log);
  CHECK(same_params(params, traj.checkpoints[2]));
}

TEST_CASE("empty datasets and empty groups are handled") {
  const auto split = planted_split();
  auto hp = small_hp();
  ModelParams params;
  OptimizerState state;
  Rng rng(1);
  params = init_params(rng, split.num_users, split.num_items, hp.dim, 0.01);
  state = init_optimizer(params);
  PeriodDataset empty;
  PeriodLog log;
  CHECK_THROWS_AS(train_on_dataset(params, state, empty, split.user_attribute, hp, FairMode::None,
                                   0.0, 1, 0, split.num_items, log),
                  ConfigError);

  // single-group data: every batch counts as an empty-group batch, run continues
  auto one_group = split;
  for (auto& a : one_group.user_attribute) a = 0;
  Strategy fade{BaseStrategy::Finetune, FairMode::Fade, {}, {}};
  const auto traj = run_strategy(fade, one_group, hp);
  long long skipped = 0;
  for (const auto& l : traj.period_logs) skipped += l.empty_group_batches;
  CHECK(skipped > 0);
}

TEST_CASE("combined loss is continuous in lambda near zero") {
  const auto split = planted_split();
  const auto hp = small_hp();
  Strategy fade0{BaseStrategy::Finetune, FairMode::Fade, {}, 0.0};
  Strategy fade_eps{BaseStrategy::Finetune, FairMode::Fade, {}, 1e-6};
  const auto a = run_strategy(fade0, split, hp);
  const auto b = run_strategy(fade_eps, split, hp);
  const double la = a.period_logs[1].epoch_losses.back();
  const double lb = b.period_logs[1].epoch_losses.back();
  CHECK(std::abs(la - lb) / std::max(std::abs(la), 1e-9) < 1e-3);
}

TEST_CASE("operation counters scale linearly in data and quadratically in mu") {
  const auto split_small = planted_split(100, 40, 2, 0.5, 7);
  const auto split_big = planted_split(200, 40, 2, 0.5, 7);
  auto hp = small_hp();
  hp.epochs_update = 2;
  Strategy fade{BaseStrategy::Finetune, FairMode::Fade, {}, {}};

  const auto a = run_strategy(fade, split_small, hp);
  const auto b = run_strategy(fade, split_big, hp);
  const auto m_a = static_cast<double>(split_small.periods[1].size());
  const auto m_b = static_cast<double>(split_big.periods[1].size());
  CHECK(a.period_logs[1].interactions == static_cast<long long>(m_a) * hp.epochs_update);
  CHECK(b.period_logs[1].interactions == static_cast<long long>(m_b) * hp.epochs_update);
  // per-interaction cost is constant: ops scale with the dataset
  const double per_a = static_cast<double>(a.period_logs[1].fairness_set_ops) / m_a;
  const double per_b = static_cast<double>(b.period_logs[1].fairness_set_ops) / m_b;
  CHECK(per_a == doctest::Approx(per_b).epsilon(1e-12));

  // doubling mu: candidate-set ops grow at most quadratically (and more than linearly)
  auto hp2 = hp;
  hp2.mu = 2 * hp.mu;
  const auto c = run_strategy(fade, split_small, hp2);
  const double ratio = static_cast<double>(c.period_logs[1].fairness_set_ops) /
                       static_cast<double>(a.period_logs[1].fairness_set_ops);
  const double quad = std::pow((hp2.mu + 1.0) / (hp.mu + 1.0), 2.0);
  CHECK(ratio > 1.0);
  CHECK(ratio <= quad + 1e-9);
}

TEST_CASE("per-period fine-tuning is faster than retraining from scratch") {
  const auto split = planted_split(400, 60, 3, 0.5, 33);
  auto hp = small_hp();
  hp.epochs_pretrain = 12;
  hp.epochs_update = 3;
  Strategy fine{BaseStrategy::Finetune, FairMode::None, {}, {}};
  Strategy retr{BaseStrategy::Retrain, FairMode::None, {}, {}};
  const auto a = run_strategy(fine, split, hp);
  const auto b = run_strategy(retr, split, hp);
  for (std::size_t t = 1; t < a.period_logs.size(); ++t)
    CHECK(a.period_logs[t].seconds < b.period_logs[t].seconds);
}
