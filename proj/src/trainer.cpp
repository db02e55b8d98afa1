#include "fade/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

#include "fade/errors.hpp"
#include "fade/fairness.hpp"

namespace fade {

namespace {

// Stream tags for Rng::derive so every sampling decision has its own stream.
enum : std::uint64_t {
  kTagInit = 1,
  kTagShuffle = 2,
  kTagNegatives = 3,
  kTagGrow = 5,
};

const std::vector<ItemId>& user_exclusion(const PeriodDataset& data, UserId u) {
  static const std::vector<ItemId> kEmpty;
  auto it = data.per_user_positives.find(u);
  return it == data.per_user_positives.end() ? kEmpty : it->second;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void HyperParams::validate() const {
  if (lambda < 0) throw ConfigError("lambda must be >= 0");
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  if (mu < 1) throw ConfigError("mu must be >= 1");
  if (n_neg < 1) throw ConfigError("n must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (l2 < 0) throw ConfigError("l2 must be >= 0");
  if (epochs_pretrain < 0 || epochs_update < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (init_scale < 0) throw ConfigError("init scale must be >= 0");
}

std::string Strategy::label() const {
  std::string name;
  switch (base) {
    case BaseStrategy::Pretrain: name = "pretrain"; break;
    case BaseStrategy::Retrain: name = "retrain"; break;
    case BaseStrategy::Finetune: name = fair == FairMode::None ? "finetune" : "fade"; break;
  }
  if (fair == FairMode::FadeAbs) {
    name = base == BaseStrategy::Finetune ? "fade-abs" : name + "-fair-abs";
  } else if (fair == FairMode::Fade && base != BaseStrategy::Finetune) {
    name += "-fair";
  }
  if (lambda_override) {
    name += ":lambda=" + std::to_string(*lambda_override);
    while (name.back() == '0') name.pop_back();
    if (name.back() == '.') name.pop_back();
  }
  if (restart_every) name += ":restart=" + std::to_string(*restart_every);
  return name;
}

Strategy parse_strategy(const std::string& text) {
  Strategy s;
  std::string head = text;
  std::string opts;
  if (auto pos = text.find(':'); pos != std::string::npos) {
    head = text.substr(0, pos);
    opts = text.substr(pos + 1);
  }
  if (head == "pretrain") { s.base = BaseStrategy::Pretrain; s.fair = FairMode::None; }
  else if (head == "pretrain-fair") { s.base = BaseStrategy::Pretrain; s.fair = FairMode::Fade; }
  else if (head == "pretrain-fair-abs") { s.base = BaseStrategy::Pretrain; s.fair = FairMode::FadeAbs; }
  else if (head == "retrain") { s.base = BaseStrategy::Retrain; s.fair = FairMode::None; }
  else if (head == "retrain-fair") { s.base = BaseStrategy::Retrain; s.fair = FairMode::Fade; }
  else if (head == "retrain-fair-abs") { s.base = BaseStrategy::Retrain; s.fair = FairMode::FadeAbs; }
  else if (head == "finetune") { s.base = BaseStrategy::Finetune; s.fair = FairMode::None; }
  else if (head == "fade") { s.base = BaseStrategy::Finetune; s.fair = FairMode::Fade; }
  else if (head == "fade-abs") { s.base = BaseStrategy::Finetune; s.fair = FairMode::FadeAbs; }
  else throw ConfigError("unknown strategy '" + head + "'");

  while (!opts.empty()) {
    std::string token = opts;
    if (auto pos = opts.find(':'); pos != std::string::npos) {
      token = opts.substr(0, pos);
      opts = opts.substr(pos + 1);
    } else {
      opts.clear();
    }
    auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError("bad strategy option '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    try {
      if (key == "lambda") s.lambda_override = std::stod(value);
      else if (key == "restart") s.restart_every = std::stoi(value);
      else throw ConfigError("unknown strategy option '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for strategy option '" + key + "'");
    }
  }
  if (s.restart_every && *s.restart_every < 2) throw ConfigError("restart interval must be >= 2");
  if (s.lambda_override && *s.lambda_override < 0) throw ConfigError("lambda must be >= 0");
  return s;
}

void train_on_dataset(ModelParams& params, OptimizerState& state, const PeriodDataset& data,
                      std::span<const std::uint8_t> user_attribute, const HyperParams& hp,
                      FairMode fair, double lambda, int epochs, int period_index,
                      int item_universe, PeriodLog& log) {
  if (data.positives.empty()) throw ConfigError("train_on_dataset: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  const auto m = data.positives.size();
  const bool use_fair = fair != FairMode::None && lambda != 0.0;
  const AdamConfig adam{hp.lr, hp.l2};
  const auto period = static_cast<std::uint64_t>(period_index);

  GradientSet grad_rec(params.num_users, params.num_items, params.dim);
  GradientSet grad_dpd(params.num_users, params.num_items, params.dim);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  // Pools are sized once; per-slot vectors keep their capacity across
  // batches so the inner loop never allocates.
  std::vector<BprSample> bpr_pool(static_cast<std::size_t>(hp.batch_size));
  std::vector<FairnessEntry> fair_pool(use_fair ? static_cast<std::size_t>(hp.batch_size) : 0);
  std::vector<ItemId> sample_scratch, fair_negs;

  log.period = period_index;
  log.epoch_losses.reserve(static_cast<std::size_t>(epochs));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(hp.seed, {kTagShuffle, period, static_cast<std::uint64_t>(epoch)});
    for (std::size_t k = m; k > 1; --k) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform_u64(k));
      std::swap(order[k - 1], order[j]);
    }

    double epoch_loss = 0.0;
    double epoch_dpd = 0.0;
    std::size_t num_batches = 0;
    std::size_t dpd_batches = 0;
    for (std::size_t begin = 0; begin < m; begin += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(m, begin + static_cast<std::size_t>(hp.batch_size));
      const auto batch_id = static_cast<std::uint64_t>(num_batches);
      const std::size_t batch_len = end - begin;

      for (std::size_t pos = begin; pos < end; ++pos) {
        const auto [user, item] = data.positives[order[pos]];
        const auto& exclusion = user_exclusion(data, user);
        const auto slot = pos - begin;

        // One stream per (period, epoch, batch, interaction): BPR negatives
        // first, fairness negatives after.
        Rng neg_rng = Rng::derive(hp.seed, {kTagNegatives, period,
                                            static_cast<std::uint64_t>(epoch), batch_id,
                                            static_cast<std::uint64_t>(slot)});
        BprSample& sample = bpr_pool[slot];
        sample.user = user;
        sample.pos_item = item;
        sample_negatives_into(neg_rng, hp.n_neg, exclusion, item_universe, sample.negatives,
                              sample_scratch);
        log.bpr_pair_ops += hp.n_neg;

        if (use_fair) {
          FairnessEntry& entry = fair_pool[slot];
          entry.user = user;
          entry.attribute = user_attribute[static_cast<std::size_t>(user)];
          sample_negatives_into(neg_rng, hp.mu, exclusion, item_universe, fair_negs,
                                sample_scratch);
          entry.candidates.clear();
          entry.candidates.reserve(static_cast<std::size_t>(hp.mu) + 1);
          entry.candidates.push_back(item);
          entry.candidates.insert(entry.candidates.end(), fair_negs.begin(), fair_negs.end());
          const long long n_cand = hp.mu + 1;
          log.fairness_set_ops += n_cand * n_cand + n_cand * hp.dim;
        }
      }

      grad_rec.clear();
      double batch_loss =
          bpr_loss_and_grad(params, std::span(bpr_pool.data(), batch_len), grad_rec);

      double fair_coeff = 0.0;
      if (use_fair) {
        grad_dpd.clear();
        double dpd_value = 0.0;
        if (dpd(params, std::span<const FairnessEntry>(fair_pool.data(), batch_len), hp.tau,
                dpd_value, grad_dpd)) {
          epoch_dpd += dpd_value;
          ++dpd_batches;
          const double fair_loss = fair == FairMode::Fade ? fairness_loss_fade(dpd_value)
                                                          : fairness_loss_abs(dpd_value);
          const double fair_slope = fair == FairMode::Fade ? fairness_loss_fade_grad(dpd_value)
                                                           : fairness_loss_abs_grad(dpd_value);
          batch_loss += lambda * fair_loss;
          fair_coeff = lambda * fair_slope;
        } else {
          ++log.empty_group_batches;
        }
      }

      if (fair_coeff != 0.0) {
        adam_step(state, params, grad_rec, grad_dpd, fair_coeff, adam);
      } else {
        adam_step(state, params, grad_rec, adam);
      }
      epoch_loss += batch_loss;
      ++num_batches;
    }
    log.interactions += static_cast<long long>(m);
    log.epoch_losses.push_back(num_batches ? epoch_loss / static_cast<double>(num_batches) : 0.0);
    if (use_fair && dpd_batches > 0)
      log.epoch_mean_dpd.push_back(epoch_dpd / static_cast<double>(dpd_batches));
  }
  log.seconds += elapsed_seconds(start);
}

void finetune_period(ModelParams& params, OptimizerState& state, const PeriodDataset& data,
                     std::span<const std::uint8_t> user_attribute, const HyperParams& hp,
                     FairMode fair, double lambda, int item_universe, PeriodLog& log) {
  train_on_dataset(params, state, data, user_attribute, hp, fair, lambda, hp.epochs_update,
                   data.index, item_universe, log);
}

void retrain(ModelParams& params, OptimizerState& state, const SplitDataset& split, int upto,
             const HyperParams& hp, FairMode fair, double lambda, PeriodLog& log) {
  const auto start = std::chrono::steady_clock::now();
  Rng init_rng = Rng::derive(hp.seed, {kTagInit});
  params = init_params(init_rng, split.num_users, split.num_items, hp.dim, hp.init_scale);
  state = init_optimizer(params);
  const double setup = elapsed_seconds(start);
  PeriodDataset merged = merge_periods(split.periods, 0, upto);
  train_on_dataset(params, state, merged, split.user_attribute, hp, fair, lambda,
                   hp.epochs_pretrain, upto, split.num_items, log);
  log.seconds += setup;
}

TrainingTrajectory run_strategy(const Strategy& strategy, const SplitDataset& split,
                                const HyperParams& hp, PretrainCache* cache) {
  hp.validate();
  if (split.periods.size() < 2)
    throw ConfigError("run_strategy: need a pretrain period plus dynamic periods");
  const int trained_periods = split.dynamic_periods();  // last period is test-only
  const double lambda = strategy.lambda_override.value_or(hp.lambda);
  // Fine-tuning strategies start from the common plain-pretrained model; the
  // pretrain/retrain strategies bake the fairness loss into period 0 itself.
  const FairMode pretrain_fair =
      strategy.base == BaseStrategy::Finetune ? FairMode::None : strategy.fair;
  const double pretrain_lambda = pretrain_fair == FairMode::None ? 0.0 : lambda;

  TrainingTrajectory traj;
  traj.checkpoints.reserve(static_cast<std::size_t>(trained_periods));
  traj.period_logs.reserve(static_cast<std::size_t>(trained_periods));

  ModelParams params;
  OptimizerState state;
  PeriodLog pretrain_log;
  const auto cache_key = std::make_pair(static_cast<int>(pretrain_fair), pretrain_lambda);
  if (cache && cache->entries.count(cache_key)) {
    const auto& entry = cache->entries.at(cache_key);
    params = entry.params;
    state = entry.state;
    pretrain_log = entry.log;
  } else {
    Rng init_rng = Rng::derive(hp.seed, {kTagInit});
    params = init_params(init_rng, split.num_users, split.num_items, hp.dim, hp.init_scale);
    state = init_optimizer(params);
    train_on_dataset(params, state, split.periods[0], split.user_attribute, hp, pretrain_fair,
                     pretrain_lambda, hp.epochs_pretrain, 0, split.num_items, pretrain_log);
    if (cache) cache->entries[cache_key] = {params, state, pretrain_log};
  }
  traj.checkpoints.push_back(params);
  traj.optimizer_states.push_back(state);
  traj.period_logs.push_back(std::move(pretrain_log));

  for (int t = 1; t < trained_periods; ++t) {
    Rng grow_rng = Rng::derive(hp.seed, {kTagGrow, static_cast<std::uint64_t>(t)});
    grow_tables(params, state, split.num_users, split.num_items, grow_rng, hp.init_scale);

    PeriodLog log;
    log.period = t;
    switch (strategy.base) {
      case BaseStrategy::Pretrain:
        break;  // frozen model
      case BaseStrategy::Retrain:
        retrain(params, state, split, t, hp, strategy.fair, lambda, log);
        break;
      case BaseStrategy::Finetune:
        if (strategy.restart_every && t % *strategy.restart_every == 0) {
          retrain(params, state, split, t, hp, strategy.fair, lambda, log);
          log.restarted = true;
        } else {
          finetune_period(params, state, split.periods[static_cast<std::size_t>(t)],
                          split.user_attribute, hp, strategy.fair, lambda, split.num_items, log);
        }
        break;
    }
    traj.checkpoints.push_back(params);
    traj.optimizer_states.push_back(state);
    traj.period_logs.push_back(std::move(log));
  }
  return traj;
}

}  // namespace fade
