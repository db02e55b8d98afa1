#include "fade/bounds.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fade {

namespace {

void validate_common(const BoundInputs& in) {
  if (in.t_te < 1) throw std::invalid_argument("bounds: t_te must be >= 1");
  if (!(in.delta > 0.0 && in.delta < 1.0))
    throw std::invalid_argument("bounds: delta must be in (0,1)");
  if (static_cast<int>(in.m.size()) != in.t_te)
    throw std::invalid_argument("bounds: need t_te dataset sizes, got " + std::to_string(in.m.size()));
  if (static_cast<int>(in.d.size()) != in.t_te)
    throw std::invalid_argument("bounds: need t_te shift measures, got " + std::to_string(in.d.size()));
  for (double mt : in.m)
    if (!(mt >= 2.0)) throw std::invalid_argument("bounds: every m_t must be >= 2");
  for (double dt : in.d)
    if (!(dt >= 0.0)) throw std::invalid_argument("bounds: every d_t must be >= 0");
  if (in.epsilon < 0.0) throw std::invalid_argument("bounds: epsilon must be >= 0");
}

// The closed forms assume equal per-period sizes after the pretrain slice.
void validate_uniform_tail(const BoundInputs& in) {
  for (std::size_t t = 2; t < in.m.size(); ++t)
    if (in.m[t] != in.m[1])
      throw std::invalid_argument("bounds: the closed forms need m_1 = ... = m_{t_te-1}");
}

}  // namespace

CoefficientVector finetune_coefficients(double gamma, int t_te) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("finetune_coefficients: gamma must be in (0,1)");
  if (t_te < 1) throw std::invalid_argument("finetune_coefficients: t_te must be >= 1");
  CoefficientVector cv;
  cv.alpha.resize(static_cast<std::size_t>(t_te));
  cv.alpha[0] = std::pow(gamma, t_te - 1);
  for (int t = 1; t < t_te; ++t)
    cv.alpha[static_cast<std::size_t>(t)] = (1.0 - gamma) * std::pow(gamma, t_te - t - 1);
  return cv;
}

CoefficientVector retrain_coefficients(const std::vector<double>& m) {
  if (m.empty()) throw std::invalid_argument("retrain_coefficients: empty size vector");
  double total = 0.0;
  for (double mt : m) {
    if (!(mt > 0.0)) throw std::invalid_argument("retrain_coefficients: every m_t must be positive");
    total += mt;
  }
  CoefficientVector cv;
  cv.alpha.reserve(m.size());
  for (double mt : m) cv.alpha.push_back(mt / total);
  return cv;
}

double general_bound(const CoefficientVector& alpha, const BoundInputs& in) {
  validate_common(in);
  if (alpha.alpha.size() != in.d.size())
    throw std::invalid_argument("general_bound: coefficient length mismatch");
  double shift = 0.0, variance = 0.0;
  for (std::size_t t = 0; t < alpha.alpha.size(); ++t) {
    const double a = alpha.alpha[t];
    shift += a * in.d[t];
    variance += a * a * std::log(in.m[t]) / in.m[t];
  }
  return in.l_star + in.epsilon + 2.0 * shift + 4.0 * std::sqrt(variance * std::log(2.0 / in.delta));
}

double finetune_bound(const BoundInputs& in) {
  validate_common(in);
  validate_uniform_tail(in);
  if (!(in.gamma > 0.0 && in.gamma < 1.0))
    throw std::invalid_argument("finetune_bound: gamma must be in (0,1)");
  if (in.t_te < 2)
    throw std::invalid_argument("finetune_bound: the variance term needs t_te >= 2");
  const double g = in.gamma;
  const int t_te = in.t_te;
  const double m0 = in.m[0];
  const double m1 = in.m[1];

  double shift = 2.0 * std::pow(g, t_te - 1) * in.d[0];
  for (int t = 1; t < t_te; ++t)
    shift += 2.0 * (1.0 - g) * std::pow(g, t_te - t - 1) * in.d[static_cast<std::size_t>(t)];

  const double variance = std::pow(g, 2 * t_te - 2) * std::log(m0) / m0 +
                          (1.0 + g) * (1.0 - std::pow(g, 2 * t_te - 4)) / (1.0 - g) *
                              std::log(m1) / m1;
  return in.l_star + in.epsilon + shift + 4.0 * std::sqrt(variance * std::log(2.0 / in.delta));
}

double retrain_bound(const BoundInputs& in) {
  validate_common(in);
  validate_uniform_tail(in);
  const int t_te = in.t_te;
  const double m0 = in.m[0];
  const double m1 = t_te >= 2 ? in.m[1] : 0.0;
  const double denom = m0 + (t_te - 1) * m1;

  double shift = 2.0 * m0 * in.d[0];
  for (int t = 1; t < t_te; ++t) shift += 2.0 * m1 * in.d[static_cast<std::size_t>(t)];
  shift /= denom;

  const double variance = std::log(m0) / denom;
  return in.l_star + in.epsilon + shift + 4.0 * std::sqrt(variance * std::log(2.0 / in.delta));
}

}  // namespace fade
