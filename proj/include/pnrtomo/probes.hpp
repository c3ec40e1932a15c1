#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnrtomo/common.hpp"
#include "pnrtomo/detector.hpp"

namespace pnrtomo::probes {

inline double log_poisson_pmf(double mean, long k) {
  if (mean == 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return k * std::log(mean) - mean - std::lgamma(static_cast<double>(k) + 1.0);
}

// coherent probe set: mean photon numbers, Fock cutoff, pulses per probe
struct ProbePlan {
  std::vector<double> alpha_sq_values;
  int truncation = 0;
  long pulses_per_probe = 100000;

  void validate() const {
    if (alpha_sq_values.size() < 2)
      throw std::invalid_argument("ProbePlan: need at least 2 probe values");
    double prev = -1.0;
    double maxval = 0.0;
    for (double a : alpha_sq_values) {
      if (a < 0.0) throw std::invalid_argument("ProbePlan: negative probe mean");
      if (a <= prev) throw std::invalid_argument("ProbePlan: probe values must be increasing");
      prev = a;
      maxval = a;
    }
    if (truncation <= maxval)
      throw std::invalid_argument("ProbePlan: truncation must exceed the largest probe mean");
    if (pulses_per_probe < 1) throw std::invalid_argument("ProbePlan: pulses_per_probe >= 1");
  }
};

// smallest integer mean m whose Poisson law puts at least `threshold` of its
// mass above n_pixels, i.e. the brightest probe saturates the detector with
// that probability
inline int choose_alpha_max(int n_pixels, double threshold = 0.9) {
  if (n_pixels < 0) throw std::invalid_argument("choose_alpha_max: negative n_pixels");
  if (threshold < 0.0 || threshold >= 1.0)
    throw std::invalid_argument("choose_alpha_max: threshold must be in [0,1)");
  if (threshold == 0.0) return 1;
  for (int m = 1;; ++m) {
    // P(X <= N) in log space; at large m the individual terms underflow
    double lmax = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(static_cast<size_t>(n_pixels) + 1);
    for (long k = 0; k <= n_pixels; ++k) {
      logs[static_cast<size_t>(k)] = log_poisson_pmf(m, k);
      lmax = std::max(lmax, logs[static_cast<size_t>(k)]);
    }
    double cdf = 0.0;
    for (double lp : logs) cdf += std::exp(lp - lmax);
    cdf *= std::exp(lmax);
    if (1.0 - cdf >= threshold) return m;
  }
}

// smallest integer M > alpha_sq_max with Poisson(alpha_sq_max) pmf at M not
// above 1e-5, evaluated in log space
inline int choose_truncation(double alpha_sq_max) {
  if (alpha_sq_max <= 0.0) throw std::invalid_argument("choose_truncation: mean must be > 0");
  const double bound = std::log(1e-5);
  int m = static_cast<int>(std::floor(alpha_sq_max)) + 1;
  while (log_poisson_pmf(alpha_sq_max, m) > bound) ++m;
  return m;
}

// alternative brightness rule for states near detector saturation: smallest
// integer mean m for which a coherent input of that mean makes every pixel
// click with probability at least `threshold`
inline int saturation_alpha_max(const detector::DetectorConfig& cfg, double threshold = 0.9) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("saturation_alpha_max: threshold must be in (0,1)");
  Vector r = cfg.rates();
  for (int m = 1;; ++m) {
    double log_all = ((1.0 - (-static_cast<double>(m) * r.array()).exp()).log()).sum();
    if (log_all >= std::log(threshold)) return m;
  }
}

// integer probe grid 1..alpha_max with the matching truncation
inline ProbePlan default_plan(int n_pixels, double threshold = 0.9, long pulses = 100000) {
  int alpha_max = choose_alpha_max(n_pixels, threshold);
  ProbePlan plan;
  for (int a = 1; a <= alpha_max; ++a) plan.alpha_sq_values.push_back(a);
  plan.truncation = choose_truncation(alpha_max);
  plan.pulses_per_probe = pulses;
  plan.validate();
  return plan;
}

// regular probe grid step..alpha_max; truncation 0 means apply the rule
inline ProbePlan grid_plan(double step, double alpha_max, int truncation = 0,
                           long pulses = 100000) {
  if (step <= 0.0) throw std::invalid_argument("grid_plan: step must be > 0");
  if (alpha_max < 2.0 * step) throw std::invalid_argument("grid_plan: need at least 2 probes");
  ProbePlan plan;
  for (long i = 1; i * step <= alpha_max + 1e-9; ++i)
    plan.alpha_sq_values.push_back(static_cast<double>(i) * step);
  plan.truncation = truncation > 0 ? truncation : choose_truncation(plan.alpha_sq_values.back());
  plan.pulses_per_probe = pulses;
  plan.validate();
  return plan;
}

// F[d, k] = Poisson pmf of probe d at k, truncated without renormalizing
inline Matrix build_probe_matrix(const ProbePlan& plan) {
  plan.validate();
  const int D = static_cast<int>(plan.alpha_sq_values.size());
  const int M = plan.truncation;
  Matrix F(D, M + 1);
  for (int d = 0; d < D; ++d) {
    const double mean = plan.alpha_sq_values[static_cast<size_t>(d)];
    if (mean == 0.0) {
      F.row(d).setZero();
      F(d, 0) = 1.0;
      continue;
    }
    for (int k = 0; k <= M; ++k) F(d, k) = std::exp(log_poisson_pmf(mean, k));
  }
  return F;
}

}  // namespace pnrtomo::probes
