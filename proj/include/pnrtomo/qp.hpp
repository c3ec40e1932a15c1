#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pnrtomo/common.hpp"

namespace pnrtomo::qp {

struct QpOptions {
  double tol = 1e-8;   // KKT acceptance tolerance
  int max_iter = 0;    // 0 means choose from problem size
  int threads = 1;     // recorded; dense kernels run single-threaded
};

struct QpVecResult {
  Vector x;
  double objective = 0.0;
  double kkt_primal = 0.0;
  double kkt_dual = 0.0;
  double kkt_comp = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;  // worst bound multiplier per outer step
};

// minimize 0.5 x'Qx - c'x subject to x >= 0 and optionally sum(x) = total,
// by a primal active-set method: solve the equality-constrained problem on
// the free variables, pin variables that the line search drives to zero,
// release the pinned variable with the most negative multiplier
inline QpVecResult qp_solve(const Matrix& Q, const Vector& c, bool sum_constraint = false,
                            double total = 1.0, const QpOptions& opts = {}) {
  const int n = static_cast<int>(c.size());
  if (Q.rows() != n || Q.cols() != n) throw std::invalid_argument("qp_solve: shape mismatch");
  if (sum_constraint && total < 0.0)
    throw NumericalError("qp_solve: infeasible, sum constraint below the nonnegative cone");

  const double pin_tol = 1e-13;
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : 10 * n + 50;

  std::vector<bool> free_var(static_cast<size_t>(n), sum_constraint);
  Vector x = Vector::Zero(n);
  if (sum_constraint) x.setConstant(total / n);

  double mu = 0.0;
  Vector xhat = x;

  // equality-constrained solve on the current free set; fills xhat and mu
  auto eqp = [&]() {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (free_var[static_cast<size_t>(i)]) idx.push_back(i);
    xhat.setZero();
    mu = 0.0;
    if (idx.empty()) return;
    const int s = static_cast<int>(idx.size());
    Matrix Qs(s, s);
    Vector cs(s);
    for (int a = 0; a < s; ++a) {
      cs[a] = c[idx[static_cast<size_t>(a)]];
      for (int b = 0; b < s; ++b)
        Qs(a, b) = Q(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
    }
    Eigen::LLT<Matrix> llt(Qs);
    if (llt.info() != Eigen::Success)
      throw NumericalError("qp_solve: free-set Hessian not positive definite");
    Vector y = llt.solve(cs);
    if (sum_constraint) {
      Vector z = llt.solve(Vector::Ones(s));
      mu = (y.sum() - total) / z.sum();
      y -= mu * z;
    }
    for (int a = 0; a < s; ++a) xhat[idx[static_cast<size_t>(a)]] = y[a];
  };

  QpVecResult res;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    eqp();
    // pull the iterate toward xhat, pinning any variable the segment drives
    // to zero; with the sum constraint the segment stays feasible
    bool blocked = true;
    while (blocked) {
      blocked = false;
      double t = 1.0;
      for (int i = 0; i < n; ++i) {
        if (!free_var[static_cast<size_t>(i)] || xhat[i] >= -pin_tol) continue;
        double step = x[i] / (x[i] - xhat[i]);
        t = std::min(t, step);
      }
      if (t < 1.0) {
        x += t * (xhat - x);
        for (int i = 0; i < n; ++i) {
          if (free_var[static_cast<size_t>(i)] && xhat[i] < -pin_tol && x[i] <= pin_tol) {
            x[i] = 0.0;
            free_var[static_cast<size_t>(i)] = false;
          }
        }
        eqp();
        blocked = true;
        ++iter;
      }
    }
    x = xhat.cwiseMax(0.0);

    // multipliers of the pinned bounds; all nonnegative at the optimum
    Vector grad = Q * x - c;
    int worst = -1;
    double worst_val = -opts.tol;
    for (int i = 0; i < n; ++i) {
      if (free_var[static_cast<size_t>(i)]) continue;
      double lam = grad[i] + (sum_constraint ? mu : 0.0);
      if (lam < worst_val) {
        worst_val = lam;
        worst = i;
      }
    }
    res.residual_history.push_back(worst < 0 ? 0.0 : worst_val);
    if (worst < 0) {
      res.converged = true;
      break;
    }
    free_var[static_cast<size_t>(worst)] = true;
  }

  Vector grad = Q * x - c;
  double primal = std::max(0.0, -x.minCoeff());
  if (sum_constraint) primal = std::max(primal, std::abs(x.sum() - total));
  double dual = 0.0;
  double stat = 0.0;
  double comp = 0.0;
  for (int i = 0; i < n; ++i) {
    double lam = grad[i] + (sum_constraint ? mu : 0.0);
    if (free_var[static_cast<size_t>(i)])
      stat = std::max(stat, std::abs(lam));
    else
      dual = std::max(dual, std::max(0.0, -lam));
    comp = std::max(comp, std::abs(x[i] * lam));
  }
  res.x = x;
  res.objective = 0.5 * x.dot(Q * x) - c.dot(x);
  res.kkt_primal = primal;
  res.kkt_dual = std::max(dual, stat);
  res.kkt_comp = comp;
  res.iterations = iter + 1;
  return res;
}

}  // namespace pnrtomo::qp
