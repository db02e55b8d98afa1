#pragma once

#include <vector>

namespace fade {

// Inputs for the generalization-bound calculators. Shift measures d_t and
// dataset sizes m_t are supplied by the caller, never estimated from data.
// All logarithms are natural.
struct BoundInputs {
  double gamma = 0.5;        // proximal fine-tuning mixture weight, in (0,1)
  int t_te = 1;              // test period index; training covers 0..t_te-1
  std::vector<double> m;     // dataset sizes m_0..m_{t_te-1}; each >= 2
  double delta = 0.1;        // confidence level, in (0,1)
  std::vector<double> d;     // shift measures d_{t,t_te} >= 0, length t_te
  double l_star = 0.0;       // baseline loss L*_{t_te}
  double epsilon = 0.0;      // optimization slack
};

struct CoefficientVector {
  std::vector<double> alpha;  // nonnegative, sums to 1
};

// Fine-tuning mixture weights: alpha_0 = gamma^(t_te-1),
// alpha_t = (1-gamma)*gamma^(t_te-t-1) for t = 1..t_te-1.
CoefficientVector finetune_coefficients(double gamma, int t_te);

// Retraining weights proportional to dataset sizes: alpha_t = m_t / sum(m).
CoefficientVector retrain_coefficients(const std::vector<double>& m);

// L* + eps + 2 sum_t alpha_t d_t + 4 sqrt( sum_t alpha_t^2 ln(m_t)/m_t * ln(2/delta) ).
double general_bound(const CoefficientVector& alpha, const BoundInputs& in);

// The displayed closed forms of the fine-tuning and retraining bounds,
// evaluated exactly as printed. The fine-tuning variance term needs
// t_te >= 2.
double finetune_bound(const BoundInputs& in);
double retrain_bound(const BoundInputs& in);

}  // namespace fade
