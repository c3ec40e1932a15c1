#pragma once

#include <cmath>
#include <stdexcept>

#include "pnrtomo/common.hpp"

namespace pnrtomo::metrics {

// Bhattacharyya-squared overlap, 1 for identical distributions
inline double fidelity(const Vector& f, const Vector& f_true) {
  if (f.size() != f_true.size()) throw std::invalid_argument("fidelity: length mismatch");
  double s = (f.cwiseMax(0.0).cwiseProduct(f_true.cwiseMax(0.0))).cwiseSqrt().sum();
  return std::min(s * s, 1.0);
}

inline double tvd(const Vector& f, const Vector& f_true) {
  if (f.size() != f_true.size()) throw std::invalid_argument("tvd: length mismatch");
  return 0.5 * (f - f_true).cwiseAbs().sum();
}

inline double mean(const Vector& f) {
  double m = 0.0;
  for (Eigen::Index k = 0; k < f.size(); ++k) m += static_cast<double>(k) * f[k];
  return m;
}

// normalized factorial moments; 1 for Poisson statistics, k! for thermal
inline double g2(const Vector& f) {
  double m = mean(f);
  if (m <= 0.0) throw NumericalError("g2: undefined moment, distribution has zero mean");
  double num = 0.0;
  for (Eigen::Index k = 0; k < f.size(); ++k)
    num += static_cast<double>(k) * static_cast<double>(k - 1) * f[k];
  return num / (m * m);
}

inline double g3(const Vector& f) {
  double m = mean(f);
  if (m <= 0.0) throw NumericalError("g3: undefined moment, distribution has zero mean");
  double num = 0.0;
  for (Eigen::Index k = 0; k < f.size(); ++k)
    num += static_cast<double>(k) * static_cast<double>(k - 1) * static_cast<double>(k - 2) * f[k];
  return num / (m * m * m);
}

// truncated Poisson photon-number distribution, renormalized; built in log
// space so large means do not overflow
inline Vector poisson_pnd(double mean_n, int truncation) {
  if (mean_n < 0.0) throw std::invalid_argument("poisson_pnd: negative mean");
  if (truncation < 0) throw std::invalid_argument("poisson_pnd: negative truncation");
  Vector f = Vector::Zero(truncation + 1);
  if (mean_n == 0.0) {
    f[0] = 1.0;
    return f;
  }
  double lm = std::log(mean_n);
  for (int k = 0; k <= truncation; ++k)
    f[k] = std::exp(k * lm - mean_n - std::lgamma(k + 1.0));
  f /= f.sum();
  return f;
}

// truncated Bose-Einstein distribution, renormalized
inline Vector thermal_pnd(double mean_n, int truncation) {
  if (mean_n < 0.0) throw std::invalid_argument("thermal_pnd: negative mean");
  if (truncation < 0) throw std::invalid_argument("thermal_pnd: negative truncation");
  Vector f = Vector::Zero(truncation + 1);
  if (mean_n == 0.0) {
    f[0] = 1.0;
    return f;
  }
  double lr = std::log(mean_n) - std::log1p(mean_n);
  for (int k = 0; k <= truncation; ++k) f[k] = std::exp(k * lr - std::log1p(mean_n));
  f /= f.sum();
  return f;
}

struct MetricReport {
  double fidelity = 0.0;
  double tvd = 0.0;
  double g2 = 0.0;
  double g3 = 0.0;
  double mean = 0.0;
};

inline MetricReport make_report(const Vector& f, const Vector& f_true) {
  MetricReport r;
  r.fidelity = fidelity(f, f_true);
  r.tvd = tvd(f, f_true);
  r.g2 = g2(f);
  r.g3 = g3(f);
  r.mean = mean(f);
  return r;
}

}  // namespace pnrtomo::metrics
