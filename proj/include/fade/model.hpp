#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fade/data.hpp"
#include "fade/rng.hpp"

namespace fade {

// Matrix-factorization parameters: one embedding row per user and per item,
// scores are inner products. 64-bit floats throughout so gradient checks
// against finite differences are stable.
struct ModelParams {
  int num_users = 0;
  int num_items = 0;
  int dim = 0;
  std::vector<double> user_emb;  // row-major [num_users x dim]
  std::vector<double> item_emb;  // row-major [num_items x dim]

  double* user_row(UserId u) { return user_emb.data() + static_cast<std::size_t>(u) * dim; }
  const double* user_row(UserId u) const { return user_emb.data() + static_cast<std::size_t>(u) * dim; }
  double* item_row(ItemId i) { return item_emb.data() + static_cast<std::size_t>(i) * dim; }
  const double* item_row(ItemId i) const { return item_emb.data() + static_cast<std::size_t>(i) * dim; }
};

// Adam accumulators, congruent in shape with ModelParams.
struct OptimizerState {
  std::vector<double> m_user, v_user, m_item, v_item;
  std::uint64_t step = 0;
};

// Sparse per-row gradient accumulator backed by dense scratch tables plus a
// touched-row list, so the hot path never hashes. Rows that were never
// touched carry no entry.
class GradientSet {
 public:
  GradientSet() = default;
  GradientSet(int num_users, int num_items, int dim) { resize(num_users, num_items, dim); }

  void resize(int num_users, int num_items, int dim);
  void clear();

  int dim() const { return dim_; }
  // Returns the accumulator row, marking it touched.
  double* user_row(UserId u);
  double* item_row(ItemId i);
  const double* user_row_if_touched(UserId u) const;
  const double* item_row_if_touched(ItemId i) const;

  const std::vector<UserId>& touched_users() const { return touched_users_; }
  const std::vector<ItemId>& touched_items() const { return touched_items_; }
  bool empty() const { return touched_users_.empty() && touched_items_.empty(); }

  // this += scale * other
  void add_scaled(const GradientSet& other, double scale);
  double dot(const GradientSet& other) const;
  double squared_norm() const { return dot(*this); }
  bool has_non_finite() const;

 private:
  int num_users_ = 0, num_items_ = 0, dim_ = 0;
  std::vector<double> user_data_, item_data_;
  std::vector<std::uint8_t> user_touched_, item_touched_;
  std::vector<UserId> touched_users_;
  std::vector<ItemId> touched_items_;
};

// One BPR training example: a positive interaction plus sampled negatives.
struct BprSample {
  UserId user;
  ItemId pos_item;
  std::vector<ItemId> negatives;
};

ModelParams init_params(Rng& rng, int num_users, int num_items, int dim, double scale);
OptimizerState init_optimizer(const ModelParams& params);

double score(const ModelParams& params, UserId user, ItemId item);

// Average over the batch of the per-interaction BPR loss
//   -(1/|N_ui|) sum_{i'} log sigmoid(s_ui - s_ui')
// accumulating exact analytic gradients into `grads` (not cleared first).
double bpr_loss_and_grad(const ModelParams& params, std::span<const BprSample> batch,
                         GradientSet& grads);

struct AdamConfig {
  double lr = 0.001;
  double l2 = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction, applied only to rows present in
// `grads`. L2 adds l2*w to each touched row's gradient before the moment
// update. Rejects non-finite gradients without modifying anything.
void adam_step(OptimizerState& state, ModelParams& params, const GradientSet& grads,
               const AdamConfig& cfg);

// Fused variant stepping on grads + coeff * extra without materializing the
// combined gradient; equivalent to add_scaled followed by adam_step.
void adam_step(OptimizerState& state, ModelParams& params, const GradientSet& grads,
               const GradientSet& extra, double coeff, const AdamConfig& cfg);

// Extends the tables; existing rows are preserved bit-identically, new rows
// are drawn like init_params, new optimizer moments are zero.
void grow_tables(ModelParams& params, OptimizerState& state, int new_num_users, int new_num_items,
                 Rng& rng, double scale);

// Versioned binary checkpoint; 64-bit values round-trip bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptimizerState& state, const Rng& rng);
void load_checkpoint(const std::string& path, ModelParams& params, OptimizerState& state, Rng& rng);

}  // namespace fade
