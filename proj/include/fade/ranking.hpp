#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fade {

// Per-candidate-set state for the sorting relaxation: the scores s, the row
// sums of the absolute-distance matrix A[k,j] = |s_k - s_j|, and the softmax
// temperature. Row k of the relaxed permutation matrix is
//   softmax([(N+1-2k)s - A.1] / tau).
struct RankingWorkspace {
  std::vector<double> scores;
  std::vector<double> abs_row_sums;  // (A.1)_j = sum_l |s_j - s_l|
  double tau = 1.0;

  int size() const { return static_cast<int>(scores.size()); }
};

RankingWorkspace make_ranking_workspace(std::vector<double> scores, double tau);

// Index of the nonzero entry of hard permutation row k (k in 1..N):
// argmax_j of (N+1-2k)s_j - (A.1)_j, ties broken by lowest index. Equals the
// index of the k-th largest score when scores are distinct.
int hard_permutation_row(std::span<const double> scores, int k);

// Relaxed permutation row k; strictly positive, sums to 1.
void relaxed_permutation_row(const RankingWorkspace& ws, int k, std::span<double> out);
std::vector<double> relaxed_permutation_row(const RankingWorkspace& ws, int k);

// Whether the k-th ranked item (descending stable sort of s) is relevant.
int hit_at_rank(std::span<const double> scores, std::span<const std::uint8_t> relevance, int k);

// DH(C;k) = relaxed row k dotted with the relevance vector. When grad is
// non-empty it receives the exact analytic partials w.r.t. each score
// (subgradient 0 for |x| at x = 0).
double differentiable_hit(const RankingWorkspace& ws, std::span<const std::uint8_t> relevance,
                          int k, std::span<double> grad = {});

struct CandidateSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> relevance;
};

// Soft NDCG@K for one candidate set: sum_k DH(C;k)/log2(k+1), normalized by
// the ideal DCG computed from hard relevance counts. Optionally accumulates
// the gradient w.r.t. scores.
double soft_ndcg_user(std::span<const double> scores, std::span<const std::uint8_t> relevance,
                      int k_cutoff, double tau, std::span<double> grad = {});

// Mean soft NDCG@K over candidate sets; sets without any relevant item are
// excluded, and excluding everybody is an error.
double approx_ndcg(const std::vector<CandidateSet>& users, int k_cutoff, double tau);

}  // namespace fade
