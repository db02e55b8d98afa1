#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fade/model.hpp"

namespace fade {

// One interaction's fairness candidate set: the positive item followed by mu
// sampled negatives. The relevance vector is implicitly one-hot at slot 0.
struct FairnessEntry {
  UserId user;
  std::uint8_t attribute;
  std::vector<ItemId> candidates;  // candidates[0] is the positive item
};

struct FairnessBatch {
  std::vector<FairnessEntry> entries;
};

struct DpdResult {
  double value = 0.0;
  GradientSet grad;
};

// Differentiable performance disparity over the batch:
//   mean DH(C;1) over group a=0  -  mean DH(C;1) over group a=1,
// with the gradient chained through the scorer into embedding rows.
// Returns false (and touches nothing) when either group is absent; callers
// skip the fairness term for such batches.
bool dpd(const ModelParams& params, std::span<const FairnessEntry> entries, double tau,
         double& value_out, GradientSet& grad_out);
bool dpd(const ModelParams& params, const FairnessBatch& batch, double tau, double& value_out,
         GradientSet& grad_out);

std::optional<DpdResult> dpd(const ModelParams& params, const FairnessBatch& batch, double tau);

// -log sigmoid(-x) = softplus(x); smooth everywhere, derivative sigmoid(x).
double fairness_loss_fade(double dpd_value);
double fairness_loss_fade_grad(double dpd_value);

// softplus(|x|); non-smooth at 0 where the subgradient 0 is used.
double fairness_loss_abs(double dpd_value);
double fairness_loss_abs_grad(double dpd_value);

// The balancing coefficient from the adaptive-fairness analysis:
//   lambda* = -2 <grad_rec, grad_dpd> / ||grad_dpd||^2,
// nonnegative whenever the recommendation gradient opposes fairness.
double lambda_star(std::span<const double> grad_rec, std::span<const double> grad_dpd);
double lambda_star(const GradientSet& grad_rec, const GradientSet& grad_dpd);

// Rate of DPD change, as the learning rate goes to +0, under a descent step
// on grad_rec + lambda * grad_fair:  -<grad_rec + lambda*grad_fair, grad_dpd>.
double directional_dpd_derivative(std::span<const double> grad_rec,
                                  std::span<const double> grad_fair, double lambda,
                                  std::span<const double> grad_dpd);
double directional_dpd_derivative(const GradientSet& grad_rec, const GradientSet& grad_fair,
                                  double lambda, const GradientSet& grad_dpd);

}  // namespace fade
