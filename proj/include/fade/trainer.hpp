#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fade/data.hpp"
#include "fade/model.hpp"

namespace fade {

struct HyperParams {
  double lambda = 1.0;     // fairness scale; 0 degenerates to the plain strategy
  double tau = 3.0;        // relaxation temperature
  int mu = 4;              // negatives per fairness candidate set
  int n_neg = 4;           // negatives per BPR interaction
  double lr = 0.001;
  double l2 = 0.0001;
  int epochs_pretrain = 50;
  int epochs_update = 10;
  int batch_size = 1024;
  int dim = 64;
  double init_scale = 0.01;
  std::uint64_t seed = 42;

  void validate() const;
};

enum class BaseStrategy { Pretrain, Retrain, Finetune };
enum class FairMode { None, Fade, FadeAbs };

struct Strategy {
  BaseStrategy base = BaseStrategy::Finetune;
  FairMode fair = FairMode::None;
  std::optional<int> restart_every;       // full retrain every r-th period, r >= 2
  std::optional<double> lambda_override;  // per-strategy fairness scale

  std::string label() const;
};

Strategy parse_strategy(const std::string& text);

struct PeriodLog {
  int period = 0;
  double seconds = 0.0;
  std::vector<double> epoch_losses;    // mean combined loss per epoch
  std::vector<double> epoch_mean_dpd;  // mean batch DPD per epoch (fairness runs only)
  long long empty_group_batches = 0;
  long long interactions = 0;          // interaction-updates processed
  long long bpr_pair_ops = 0;          // positive/negative score pairs
  long long fairness_set_ops = 0;      // (mu+1)^2 + (mu+1)*d per candidate set
  bool restarted = false;              // period performed a full retrain
};

struct TrainingTrajectory {
  std::vector<ModelParams> checkpoints;  // index t = model after period t
  std::vector<OptimizerState> optimizer_states;
  std::vector<PeriodLog> period_logs;
};

// Strategies that share an identical pretrain phase (same seed, same loss)
// can reuse the period-0 model. Keyed by the fairness mode baked into
// pretraining and its effective lambda; results are bit-identical to an
// uncached run.
struct PretrainCache {
  struct Entry {
    ModelParams params;
    OptimizerState state;
    PeriodLog log;
  };
  std::map<std::pair<int, double>, Entry> entries;
};

// One pass of Algorithm-1-style training over `data`: per epoch, shuffle the
// interactions into batches, sample BPR and fairness negatives per
// interaction, and take one Adam step per batch on grad(L_rec) + an adaptive
// multiple of grad(DPD). `period_index` keys the sampling streams.
void train_on_dataset(ModelParams& params, OptimizerState& state, const PeriodDataset& data,
                      std::span<const std::uint8_t> user_attribute, const HyperParams& hp,
                      FairMode fair, double lambda, int epochs, int period_index,
                      int item_universe, PeriodLog& log);

// Fine-tunes on the single period `data` for hp.epochs_update epochs.
void finetune_period(ModelParams& params, OptimizerState& state, const PeriodDataset& data,
                     std::span<const std::uint8_t> user_attribute, const HyperParams& hp,
                     FairMode fair, double lambda, int item_universe, PeriodLog& log);

// Fresh parameters trained on the concatenation of periods [0, upto] for
// hp.epochs_pretrain epochs.
void retrain(ModelParams& params, OptimizerState& state, const SplitDataset& split, int upto,
             const HyperParams& hp, FairMode fair, double lambda, PeriodLog& log);

// Runs a full strategy over the split: pretrain on period 0, then one update
// per period t = 1..T-1 (period T is held out for testing). Records a
// checkpoint and a log entry per period.
TrainingTrajectory run_strategy(const Strategy& strategy, const SplitDataset& split,
                                const HyperParams& hp, PretrainCache* cache = nullptr);

}  // namespace fade
