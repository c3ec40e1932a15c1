#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnrtomo/common.hpp"
#include "pnrtomo/metrics.hpp"

namespace pnrtomo::eme {

struct EmeOptions {
  double lambda = 0.02;          // entropy regularization weight
  int max_iter = 100000;
  double convergence_tol = 1e-9;  // L1 change between iterates
  double floor_eps = 1e-12;       // positive floor before taking logs

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("EmeOptions: lambda must be >= 0");
    if (max_iter < 1) throw std::invalid_argument("EmeOptions: max_iter must be >= 1");
    if (convergence_tol <= 0.0) throw std::invalid_argument("EmeOptions: tol must be > 0");
    if (floor_eps <= 0.0 || floor_eps > 1e-8)
      throw std::invalid_argument("EmeOptions: floor_eps must be in (0, 1e-8]");
  }
};

struct EmeResult {
  Vector f;                 // reconstructed photon-number distribution
  int iterations = 0;
  double final_change = 0.0;
  bool converged = false;
  double lambda = 0.0;
};

// expectation-maximization with an entropy correction: starting from the
// uniform vector, iterate f_k <- R_k f_k - lambda (ln f_k + S) f_k where R
// is the usual EM multiplier and S the current entropy, then floor and
// renormalize so every iterate is a valid distribution
inline EmeResult eme_reconstruct(const Vector& clicks, const Matrix& povm,
                                 const EmeOptions& opts = {}) {
  opts.validate();
  const Eigen::Index m1 = povm.rows();
  const Eigen::Index n1 = povm.cols();
  if (clicks.size() != n1) throw std::invalid_argument("eme_reconstruct: click length mismatch");
  if (clicks.minCoeff() < 0.0) throw std::invalid_argument("eme_reconstruct: negative click probability");
  if (std::abs(clicks.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("eme_reconstruct: click probabilities must sum to 1");
  if (povm.minCoeff() < -1e-10) throw std::invalid_argument("eme_reconstruct: negative POVM entry");

  Matrix pi = povm.cwiseMax(0.0);
  EmeResult res;
  res.lambda = opts.lambda;
  res.f = Vector::Constant(m1, 1.0 / static_cast<double>(m1));

  Vector q(n1), ratio(n1), r(m1), next(m1);
  for (int i = 0; i < opts.max_iter; ++i) {
    q.noalias() = pi.transpose() * res.f;
    for (Eigen::Index n = 0; n < n1; ++n) {
      if (clicks[n] <= 0.0) {
        ratio[n] = 0.0;
        continue;
      }
      if (q[n] <= 0.0)
        throw NumericalError("eme_reconstruct: model mismatch, outcome " + std::to_string(n) +
                             " observed but assigned zero probability");
      ratio[n] = clicks[n] / q[n];
    }
    r.noalias() = pi * ratio;

    double entropy = 0.0;
    for (Eigen::Index k = 0; k < m1; ++k) entropy -= res.f[k] * std::log(res.f[k]);
    for (Eigen::Index k = 0; k < m1; ++k)
      next[k] = r[k] * res.f[k] - opts.lambda * (std::log(res.f[k]) + entropy) * res.f[k];

    next = next.cwiseMax(opts.floor_eps);
    next /= next.sum();

    res.final_change = (next - res.f).cwiseAbs().sum();
    res.f = next;
    res.iterations = i + 1;
    if (res.final_change < opts.convergence_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

struct ReconProblem {
  Vector clicks;  // measured or exact click distribution
  Vector truth;   // reference photon-number distribution
};

struct LambdaRow {
  double lambda = 0.0;
  double mean_fidelity = 0.0;
};

// mean reconstruction fidelity across a set of problems, per lambda
inline std::vector<LambdaRow> lambda_sweep(const std::vector<ReconProblem>& problems,
                                           const Matrix& povm, const std::vector<double>& lambdas,
                                           const EmeOptions& base = {}) {
  if (problems.empty()) throw std::invalid_argument("lambda_sweep: no problems");
  if (lambdas.empty()) throw std::invalid_argument("lambda_sweep: no lambda values");
  std::vector<LambdaRow> rows;
  rows.reserve(lambdas.size());
  for (double lam : lambdas) {
    EmeOptions opts = base;
    opts.lambda = lam;
    double acc = 0.0;
    for (const ReconProblem& pr : problems) {
      EmeResult r = eme_reconstruct(pr.clicks, povm, opts);
      acc += metrics::fidelity(r.f, pr.truth);
    }
    rows.push_back({lam, acc / static_cast<double>(problems.size())});
  }
  return rows;
}

}  // namespace pnrtomo::eme
