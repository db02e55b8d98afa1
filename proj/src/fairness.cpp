#include "fade/fairness.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "fade/dot.hpp"
#include "fade/math.hpp"

namespace fade {

namespace {

// DH(C;1) and its score gradient, written for the one-hot-at-slot-0
// relevance used by the fairness batches. Scratch buffers are caller-owned
// so per-entry work does not allocate.
double dh_at_1(std::span<const double> s, double tau, std::span<double> grad,
               std::span<double> z_scratch, std::span<double> w_scratch) {
  const int n = static_cast<int>(s.size());
  const double c = static_cast<double>(n - 1);  // N+1-2k at k=1
  const double inv_tau = 1.0 / tau;

  double max_logit = -std::numeric_limits<double>::infinity();
  int max_at = 0;
  for (int j = 0; j < n; ++j) {
    double row_sum = 0.0;
    for (int l = 0; l < n; ++l) row_sum += std::abs(s[j] - s[l]);
    z_scratch[j] = (c * s[j] - row_sum) * inv_tau;
    if (z_scratch[j] > max_logit) {
      max_logit = z_scratch[j];
      max_at = j;
    }
  }
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    z_scratch[j] = j == max_at ? 1.0 : std::exp(z_scratch[j] - max_logit);
    total += z_scratch[j];
  }
  const double inv_total = 1.0 / total;
  for (int j = 0; j < n; ++j) z_scratch[j] *= inv_total;  // now the softmax row
  const double dh = z_scratch[0];

  for (int q = 0; q < n; ++q) {
    const double y = q == 0 ? 1.0 : 0.0;
    w_scratch[q] = z_scratch[q] * (y - dh) * inv_tau;
  }
  for (int m = 0; m < n; ++m) {
    double g = c * w_scratch[m];
    for (int l = 0; l < n; ++l) {
      if (l == m) continue;
      const double diff = s[m] - s[l];
      if (diff == 0.0) continue;
      g -= (diff > 0.0 ? 1.0 : -1.0) * (w_scratch[m] + w_scratch[l]);
    }
    grad[m] = g;
  }
  return dh;
}

}  // namespace

bool dpd(const ModelParams& params, std::span<const FairnessEntry> entries, double tau,
         double& value_out, GradientSet& grad_out) {
  if (!(tau > 0.0)) throw std::invalid_argument("dpd: tau must be positive");
  int n0 = 0, n1 = 0;
  for (const auto& e : entries) (e.attribute == 0 ? n0 : n1) += 1;
  if (n0 == 0 || n1 == 0) return false;

  const int d = params.dim;
  const double w0 = 1.0 / static_cast<double>(n0);
  const double w1 = -1.0 / static_cast<double>(n1);

  std::vector<double> scores, score_grad, z_scratch, w_scratch;
  double value = 0.0;
  for (const auto& e : entries) {
    const auto n = e.candidates.size();
    scores.resize(n);
    score_grad.resize(n);
    z_scratch.resize(n);
    w_scratch.resize(n);

    const double* eu = params.user_row(e.user);
    for (std::size_t j = 0; j < n; ++j) {
      scores[j] = dot_rows(eu, params.item_row(e.candidates[j]), d);
    }

    const double dh = dh_at_1(scores, tau, score_grad, z_scratch, w_scratch);
    const double weight = e.attribute == 0 ? w0 : w1;
    value += weight * dh;

    double* gu = grad_out.user_row(e.user);
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = weight * score_grad[j];
      const double* ei = params.item_row(e.candidates[j]);
      double* gi = grad_out.item_row(e.candidates[j]);
      for (int t = 0; t < d; ++t) {
        gu[t] += gj * ei[t];
        gi[t] += gj * eu[t];
      }
    }
  }
  value_out = value;
  return true;
}

bool dpd(const ModelParams& params, const FairnessBatch& batch, double tau, double& value_out,
         GradientSet& grad_out) {
  return dpd(params, std::span<const FairnessEntry>(batch.entries), tau, value_out, grad_out);
}

std::optional<DpdResult> dpd(const ModelParams& params, const FairnessBatch& batch, double tau) {
  DpdResult result;
  result.grad.resize(params.num_users, params.num_items, params.dim);
  if (!dpd(params, batch, tau, result.value, result.grad)) return std::nullopt;
  return result;
}

double fairness_loss_fade(double dpd_value) { return softplus(dpd_value); }

double fairness_loss_fade_grad(double dpd_value) { return sigmoid(dpd_value); }

double fairness_loss_abs(double dpd_value) { return softplus(std::abs(dpd_value)); }

double fairness_loss_abs_grad(double dpd_value) {
  if (dpd_value == 0.0) return 0.0;
  const double s = sigmoid(std::abs(dpd_value));
  return dpd_value > 0.0 ? s : -s;
}

double lambda_star(std::span<const double> grad_rec, std::span<const double> grad_dpd) {
  if (grad_rec.size() != grad_dpd.size())
    throw std::invalid_argument("lambda_star: gradient size mismatch");
  double dot = 0.0, norm2 = 0.0;
  for (std::size_t j = 0; j < grad_dpd.size(); ++j) {
    dot += grad_rec[j] * grad_dpd[j];
    norm2 += grad_dpd[j] * grad_dpd[j];
  }
  if (norm2 == 0.0) throw std::invalid_argument("lambda_star: zero DPD gradient");
  return -2.0 * dot / norm2;
}

double lambda_star(const GradientSet& grad_rec, const GradientSet& grad_dpd) {
  const double norm2 = grad_dpd.squared_norm();
  if (norm2 == 0.0) throw std::invalid_argument("lambda_star: zero DPD gradient");
  return -2.0 * grad_rec.dot(grad_dpd) / norm2;
}

double directional_dpd_derivative(std::span<const double> grad_rec,
                                  std::span<const double> grad_fair, double lambda,
                                  std::span<const double> grad_dpd) {
  if (grad_rec.size() != grad_dpd.size() || grad_fair.size() != grad_dpd.size())
    throw std::invalid_argument("directional_dpd_derivative: gradient size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < grad_dpd.size(); ++j)
    acc += (grad_rec[j] + lambda * grad_fair[j]) * grad_dpd[j];
  return -acc;
}

double directional_dpd_derivative(const GradientSet& grad_rec, const GradientSet& grad_fair,
                                  double lambda, const GradientSet& grad_dpd) {
  return -(grad_rec.dot(grad_dpd) + lambda * grad_fair.dot(grad_dpd));
}

}  // namespace fade
