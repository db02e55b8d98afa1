#include "fade/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fade {

namespace {

double ideal_dcg(int relevant_count, int k_cutoff) {
  double dcg = 0.0;
  const int top = std::min(relevant_count, k_cutoff);
  for (int k = 1; k <= top; ++k) dcg += 1.0 / std::log2(static_cast<double>(k) + 1.0);
  return dcg;
}

}  // namespace

RankingWorkspace make_ranking_workspace(std::vector<double> scores, double tau) {
  if (scores.empty()) throw std::invalid_argument("ranking workspace: empty score vector");
  if (!(tau > 0.0)) throw std::invalid_argument("ranking workspace: tau must be positive");
  RankingWorkspace ws;
  const int n = static_cast<int>(scores.size());
  ws.scores = std::move(scores);
  ws.tau = tau;
  ws.abs_row_sums.assign(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    for (int l = 0; l < n; ++l) sum += std::abs(ws.scores[j] - ws.scores[l]);
    ws.abs_row_sums[static_cast<std::size_t>(j)] = sum;
  }
  return ws;
}

int hard_permutation_row(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw std::invalid_argument("hard_permutation_row: empty score vector");
  if (k < 1 || k > n) throw std::invalid_argument("hard_permutation_row: rank out of range");
  const double c = static_cast<double>(n + 1 - 2 * k);
  int best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    double row_sum = 0.0;
    for (int l = 0; l < n; ++l) row_sum += std::abs(scores[j] - scores[l]);
    const double logit = c * scores[j] - row_sum;
    if (logit > best_logit) {
      best_logit = logit;
      best = j;
    }
  }
  return best;
}

void relaxed_permutation_row(const RankingWorkspace& ws, int k, std::span<double> out) {
  const int n = ws.size();
  if (k < 1 || k > n) throw std::invalid_argument("relaxed_permutation_row: rank out of range");
  if (!(ws.tau > 0.0)) throw std::invalid_argument("relaxed_permutation_row: tau must be positive");
  if (static_cast<int>(out.size()) != n)
    throw std::invalid_argument("relaxed_permutation_row: output size mismatch");
  const double c = static_cast<double>(n + 1 - 2 * k);
  const double inv_tau = 1.0 / ws.tau;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    out[j] = (c * ws.scores[static_cast<std::size_t>(j)] - ws.abs_row_sums[static_cast<std::size_t>(j)]) * inv_tau;
    max_logit = std::max(max_logit, out[j]);
  }
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(out[j] - max_logit);
    total += out[j];
  }
  const double inv_total = 1.0 / total;
  for (int j = 0; j < n; ++j) out[j] *= inv_total;
}

std::vector<double> relaxed_permutation_row(const RankingWorkspace& ws, int k) {
  std::vector<double> out(static_cast<std::size_t>(ws.size()));
  relaxed_permutation_row(ws, k, out);
  return out;
}

int hit_at_rank(std::span<const double> scores, std::span<const std::uint8_t> relevance, int k) {
  const int n = static_cast<int>(scores.size());
  if (k < 1 || k > n) throw std::invalid_argument("hit_at_rank: rank out of range");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return relevance[static_cast<std::size_t>(order[static_cast<std::size_t>(k - 1)])] ? 1 : 0;
}

double differentiable_hit(const RankingWorkspace& ws, std::span<const std::uint8_t> relevance,
                          int k, std::span<double> grad) {
  const int n = ws.size();
  std::vector<double> row(static_cast<std::size_t>(n));
  relaxed_permutation_row(ws, k, row);
  double value = 0.0;
  for (int j = 0; j < n; ++j)
    if (relevance[static_cast<std::size_t>(j)]) value += row[static_cast<std::size_t>(j)];

  if (!grad.empty()) {
    if (static_cast<int>(grad.size()) != n)
      throw std::invalid_argument("differentiable_hit: gradient size mismatch");
    // With logits z_q = c*s_q - sum_l |s_q - s_l| and p = softmax(z/tau),
    // dDH/dz_q = p_q (y_q - DH)/tau =: w_q, and
    // dDH/ds_m = c*w_m - sum_{l != m} sgn(s_m - s_l) (w_m + w_l).
    const double c = static_cast<double>(n + 1 - 2 * k);
    const double inv_tau = 1.0 / ws.tau;
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
      const double y = relevance[static_cast<std::size_t>(q)] ? 1.0 : 0.0;
      w[static_cast<std::size_t>(q)] = row[static_cast<std::size_t>(q)] * (y - value) * inv_tau;
    }
    for (int m = 0; m < n; ++m) {
      double g = c * w[static_cast<std::size_t>(m)];
      const double sm = ws.scores[static_cast<std::size_t>(m)];
      for (int l = 0; l < n; ++l) {
        if (l == m) continue;
        const double diff = sm - ws.scores[static_cast<std::size_t>(l)];
        if (diff == 0.0) continue;  // subgradient 0 at ties
        const double sgn = diff > 0.0 ? 1.0 : -1.0;
        g -= sgn * (w[static_cast<std::size_t>(m)] + w[static_cast<std::size_t>(l)]);
      }
      grad[static_cast<std::size_t>(m)] = g;
    }
  }
  return value;
}

double soft_ndcg_user(std::span<const double> scores, std::span<const std::uint8_t> relevance,
                      int k_cutoff, double tau, std::span<double> grad) {
  const int n = static_cast<int>(scores.size());
  if (k_cutoff < 1) throw std::invalid_argument("soft_ndcg_user: cutoff must be >= 1");
  int relevant = 0;
  for (auto y : relevance) relevant += y ? 1 : 0;
  const double max_dcg = ideal_dcg(relevant, k_cutoff);
  if (!(max_dcg > 0.0)) throw std::invalid_argument("soft_ndcg_user: no relevant candidate");

  RankingWorkspace ws = make_ranking_workspace({scores.begin(), scores.end()}, tau);
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> dh_grad(grad.empty() ? 0 : static_cast<std::size_t>(n));

  double dcg = 0.0;
  const int top = std::min(k_cutoff, n);
  for (int k = 1; k <= top; ++k) {
    const double discount = 1.0 / std::log2(static_cast<double>(k) + 1.0);
    const double dh = differentiable_hit(ws, relevance, k, dh_grad);
    dcg += discount * dh;
    if (!grad.empty())
      for (int j = 0; j < n; ++j) grad[static_cast<std::size_t>(j)] += discount * dh_grad[static_cast<std::size_t>(j)] / max_dcg;
  }
  return dcg / max_dcg;
}

double approx_ndcg(const std::vector<CandidateSet>& users, int k_cutoff, double tau) {
  double total = 0.0;
  int counted = 0;
  for (const auto& cs : users) {
    const bool has_relevant =
        std::any_of(cs.relevance.begin(), cs.relevance.end(), [](std::uint8_t y) { return y != 0; });
    if (!has_relevant) continue;
    total += soft_ndcg_user(cs.scores, cs.relevance, k_cutoff, tau);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("approx_ndcg: every candidate set lacks relevant items");
  return total / static_cast<double>(counted);
}

}  // namespace fade
