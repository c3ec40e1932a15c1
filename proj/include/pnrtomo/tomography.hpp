#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pnrtomo/common.hpp"
#include "pnrtomo/qp.hpp"

namespace pnrtomo::tomo {

// second-difference smoothing operator: sum of u_k u_k' over neighboring
// Fock components, u_k = e_k - e_{k+1}; a path-graph Laplacian, so it is
// positive semidefinite and annihilates constant columns
inline Matrix smoothing_matrix(int truncation) {
  if (truncation < 0) throw std::invalid_argument("smoothing_matrix: negative truncation");
  const int m = truncation + 1;
  Matrix U = Matrix::Zero(m, m);
  for (int k = 0; k + 1 < m; ++k) {
    U(k, k) += 1.0;
    U(k + 1, k + 1) += 1.0;
    U(k, k + 1) -= 1.0;
    U(k + 1, k) -= 1.0;
  }
  return U;
}

struct UnconstrainedDiag {
  double residual = 0.0;     // relative residual of the linear solve
  double rowsum_dev = 0.0;   // largest |row sum - 1| of the solution
  bool lemma_applies = false;  // true when P and F rows sum to 1 exactly
};

// closed-form stationary point of the smoothed least-squares objective,
// ignoring the inequality constraints: (F'F + gamma U)^{-1} F'P.  When both
// P and F are exactly row-stochastic its rows provably sum to 1; truncated
// probe rows fall slightly short of stochastic, which perturbs the row sums
// by roughly the tail mass amplified through the inverse, so the strict
// check only runs when the hypothesis holds
inline Matrix unconstrained_solution(const Matrix& P, const Matrix& F, double gamma,
                                     UnconstrainedDiag* diag = nullptr) {
  if (P.rows() != F.rows()) throw std::invalid_argument("unconstrained_solution: row mismatch");
  if (gamma <= 0.0) throw std::invalid_argument("unconstrained_solution: gamma must be > 0");
  const int m = static_cast<int>(F.cols());
  Matrix A = F.transpose() * F + gamma * smoothing_matrix(m - 1);
  Matrix B = F.transpose() * P;
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success) {
    double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(A).eigenvalues().minCoeff();
    throw NumericalError("unconstrained_solution: singular system, smallest eigenvalue " +
                         std::to_string(min_eig));
  }
  Matrix X = ldlt.solve(B);
  double residual = (A * X - B).norm() / std::max(B.norm(), 1e-300);
  if (residual > 1e-8) {
    double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(A).eigenvalues().minCoeff();
    throw NumericalError("unconstrained_solution: solve residual " + std::to_string(residual) +
                         ", smallest eigenvalue " + std::to_string(min_eig));
  }

  double rowsum_dev = (X.rowwise().sum().array() - 1.0).abs().maxCoeff();
  bool applies = (P.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9 &&
                 (F.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9;
  if (applies && rowsum_dev > 1e-6)
    throw NumericalError("unconstrained_solution: row sums deviate from 1 by " +
                         std::to_string(rowsum_dev));
  if (diag) {
    diag->residual = residual;
    diag->rowsum_dev = rowsum_dev;
    diag->lemma_applies = applies;
  }
  return X;
}

struct SparsityMask {
  MaskMatrix mask;
  double fraction = 0.0;  // fraction of variables fixed to zero
  int fallback_rows = 0;  // rows whose mask was dropped to stay feasible
};

// fix to zero every variable whose unconstrained value is nonpositive; a row
// that would lose all its variables keeps them all instead, since the row
// must still sum to 1
inline SparsityMask sparsity_mask(const Matrix& pi_tilde) {
  SparsityMask out;
  out.mask = pi_tilde.array() <= 0.0;
  for (Eigen::Index k = 0; k < out.mask.rows(); ++k) {
    if (out.mask.row(k).all()) {
      out.mask.row(k).setConstant(false);
      ++out.fallback_rows;
    }
  }
  out.fraction = static_cast<double>(out.mask.cast<int>().sum()) /
                 static_cast<double>(out.mask.size());
  return out;
}

struct QpSolution {
  Matrix povm;
  double objective = 0.0;
  double kkt_primal_residual = 0.0;
  double kkt_dual_residual = 0.0;
  double kkt_comp_residual = 0.0;
  int iterations = 0;  // equality-constrained subproblem solves
  bool converged = false;
  double wall_time = 0.0;      // solve phase, seconds
  double assembly_time = 0.0;  // building the quadratic form, seconds
  std::int64_t peak_memory = 0;
  double masked_fraction = 0.0;
  int mask_fallback_rows = 0;
  std::vector<double> residual_history;  // worst bound multiplier per outer step
};

namespace detail {

// cached per-column state: free index set, factorization of the principal
// submatrix A_n, its inverse W (needed to couple columns through the row-sum
// multipliers), and the unconstrained direction y = A_n^{-1} b_n
struct ColState {
  std::vector<int> idx;
  Matrix W;
  Vector y;
  bool dirty = true;
};

struct EngineResult {
  Matrix X;
  Vector mu;
  int eqp_count = 0;
  bool converged = false;
  double primal = 0.0;
  double dual = 0.0;
  double comp = 0.0;
  std::vector<double> history;
};

// primal active-set method for:  min 0.5 sum_n x_n' A x_n - b_n' x_n
// subject to row sums of [x_0 ... x_N] equal to 1, X >= 0, and X = 0 on the
// masked entries.  The objective separates per column; only the row-sum
// constraints couple them, through one multiplier vector mu solved from
// T mu = sum_n scatter(A_n^{-1} b_n) - 1 with T = sum_n scatter(A_n^{-1})
inline EngineResult active_set_engine(const Matrix& A, const Matrix& B, const MaskMatrix& mask,
                                      const qp::QpOptions& opts, MemTally& mem) {
  const int m1 = static_cast<int>(A.rows());
  const int n1 = static_cast<int>(B.cols());
  if (A.cols() != m1 || B.rows() != m1 || mask.rows() != m1 || mask.cols() != n1)
    throw std::invalid_argument("active_set_engine: shape mismatch");

  const double pin_tol = 1e-13;
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : 4 * m1 * n1 + 500;

  MaskMatrix free_var = !mask;
  std::vector<int> row_free(static_cast<size_t>(m1), 0);
  for (int k = 0; k < m1; ++k) {
    for (int n = 0; n < n1; ++n)
      if (free_var(k, n)) ++row_free[static_cast<size_t>(k)];
    if (row_free[static_cast<size_t>(k)] == 0)
      throw std::invalid_argument("active_set_engine: a row is fully masked");
  }

  EngineResult res;
  res.X = Matrix::Zero(m1, n1);
  for (int k = 0; k < m1; ++k) {
    double v = 1.0 / row_free[static_cast<size_t>(k)];
    for (int n = 0; n < n1; ++n)
      if (free_var(k, n)) res.X(k, n) = v;
  }

  std::vector<ColState> cols(static_cast<size_t>(n1));
  for (int n = 0; n < n1; ++n) {
    for (int k = 0; k < m1; ++k)
      if (free_var(k, n)) cols[static_cast<size_t>(n)].idx.push_back(k);
  }

  Matrix Xhat = Matrix::Zero(m1, n1);
  Matrix T(m1, m1);
  Vector rhs(m1), mu(m1);
  mem.add(MemTally::bytes_of(res.X) + MemTally::bytes_of(Xhat) + MemTally::bytes_of(T) +
          2 * MemTally::bytes_of(rhs));
  std::int64_t cached_bytes = 0;

  Matrix As;  // scratch for the principal submatrix
  Eigen::LDLT<Matrix> ldlt;
  Eigen::LLT<Matrix> lltT;
  mem.add(3 * MemTally::bytes_of(T));  // scratch and factorization storage

  auto refresh = [&](int n) {
    ColState& c = cols[static_cast<size_t>(n)];
    const int s = static_cast<int>(c.idx.size());
    std::int64_t new_bytes = static_cast<std::int64_t>(s) * s * 8 + s * 8;
    mem.add(new_bytes - MemTally::bytes_of(c.W) - MemTally::bytes_of(c.y));
    As.resize(s, s);
    Vector bs(s);
    for (int a = 0; a < s; ++a) {
      bs[a] = B(c.idx[static_cast<size_t>(a)], n);
      for (int b = 0; b < s; ++b)
        As(a, b) = A(c.idx[static_cast<size_t>(a)], c.idx[static_cast<size_t>(b)]);
    }
    ldlt.compute(As);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("active_set_engine: free-set block not positive definite");
    c.W = ldlt.solve(Matrix::Identity(s, s));
    c.y = ldlt.solve(bs);
    c.dirty = false;
  };

  auto eqp = [&]() {
    for (int n = 0; n < n1; ++n)
      if (cols[static_cast<size_t>(n)].dirty) refresh(n);
    T.setZero();
    rhs.setConstant(-1.0);
    for (int n = 0; n < n1; ++n) {
      const ColState& c = cols[static_cast<size_t>(n)];
      const int s = static_cast<int>(c.idx.size());
      for (int a = 0; a < s; ++a) {
        const int ka = c.idx[static_cast<size_t>(a)];
        rhs[ka] += c.y[a];
        for (int b = 0; b < s; ++b) T(ka, c.idx[static_cast<size_t>(b)]) += c.W(a, b);
      }
    }
    lltT.compute(T);
    if (lltT.info() != Eigen::Success)
      throw NumericalError("active_set_engine: row-sum system not positive definite");
    mu = lltT.solve(rhs);
    Xhat.setZero();
    for (int n = 0; n < n1; ++n) {
      const ColState& c = cols[static_cast<size_t>(n)];
      const int s = static_cast<int>(c.idx.size());
      Vector mus(s);
      for (int a = 0; a < s; ++a) mus[a] = mu[c.idx[static_cast<size_t>(a)]];
      Vector xs = c.y - c.W * mus;
      for (int a = 0; a < s; ++a) Xhat(c.idx[static_cast<size_t>(a)], n) = xs[a];
    }
    ++res.eqp_count;
  };

  auto pin = [&](int k, int n) {
    if (row_free[static_cast<size_t>(k)] <= 1) return false;  // keep rows feasible
    free_var(k, n) = false;
    --row_free[static_cast<size_t>(k)];
    ColState& c = cols[static_cast<size_t>(n)];
    c.idx.erase(std::find(c.idx.begin(), c.idx.end(), k));
    c.dirty = true;
    return true;
  };

  eqp();
  while (res.eqp_count < max_iter) {
    // line search from X toward Xhat; pin whatever hits the bound first
    bool at_bound = false;
    double t = 1.0;
    for (int n = 0; n < n1; ++n)
      for (int k = 0; k < m1; ++k)
        if (free_var(k, n) && Xhat(k, n) < -pin_tol) {
          at_bound = true;
          t = std::min(t, res.X(k, n) / (res.X(k, n) - Xhat(k, n)));
        }
    if (at_bound) {
      res.X += t * (Xhat - res.X);
      for (int n = 0; n < n1; ++n)
        for (int k = 0; k < m1; ++k)
          if (free_var(k, n) && Xhat(k, n) < -pin_tol && res.X(k, n) <= pin_tol) {
            if (pin(k, n)) res.X(k, n) = 0.0;
          }
      eqp();
      continue;
    }
    res.X = Xhat.cwiseMax(0.0);

    // bound multipliers: gradient plus the row-sum multiplier; the most
    // negative pinned one, if any, is released
    Matrix G = A * res.X - B;
    G.colwise() += mu;
    int rk = -1, rn = -1;
    double worst = -opts.tol;
    for (int n = 0; n < n1; ++n)
      for (int k = 0; k < m1; ++k)
        if (!free_var(k, n) && !mask(k, n) && G(k, n) < worst) {
          worst = G(k, n);
          rk = k;
          rn = n;
        }
    res.history.push_back(rk >= 0 ? worst : 0.0);
    if (rk < 0) {
      res.converged = true;
      break;
    }
    free_var(rk, rn) = true;
    ++row_free[static_cast<size_t>(rk)];
    ColState& c = cols[static_cast<size_t>(rn)];
    c.idx.insert(std::lower_bound(c.idx.begin(), c.idx.end(), rk), rk);
    c.dirty = true;
    eqp();
  }

  for (const ColState& c : cols)
    cached_bytes += MemTally::bytes_of(c.W) + MemTally::bytes_of(c.y);
  mem.sub(cached_bytes);  // engine-owned caches released on exit
  mem.sub(MemTally::bytes_of(res.X) + MemTally::bytes_of(Xhat) + 4 * MemTally::bytes_of(T) +
          2 * MemTally::bytes_of(rhs));

  // KKT certificate on the final iterate
  Matrix G = A * res.X - B;
  G.colwise() += mu;
  res.mu = mu;
  res.primal = std::max(std::max(0.0, -res.X.minCoeff()),
                        (res.X.rowwise().sum().array() - 1.0).abs().maxCoeff());
  double stat = 0.0, dualneg = 0.0, comp = 0.0;
  for (int n = 0; n < n1; ++n)
    for (int k = 0; k < m1; ++k) {
      if (free_var(k, n))
        stat = std::max(stat, std::abs(G(k, n)));
      else if (!mask(k, n))
        dualneg = std::max(dualneg, std::max(0.0, -G(k, n)));
      comp = std::max(comp, std::abs(res.X(k, n) * G(k, n)));
    }
  res.dual = std::max(stat, dualneg);
  res.comp = comp;
  return res;
}

inline double objective_value(const Matrix& P, const Matrix& F, double gamma, const Matrix& X) {
  Matrix U = smoothing_matrix(static_cast<int>(X.rows()) - 1);
  return 0.5 * (P - F * X).squaredNorm() + 0.5 * gamma * (X.transpose() * U * X).trace();
}

inline QpSolution solve_constrained(const Matrix& P, const Matrix& F, double gamma,
                                    const MaskMatrix* mask_in, const qp::QpOptions& opts) {
  if (P.rows() != F.rows()) throw std::invalid_argument("solve: P and F row mismatch");
  if (gamma < 0.0) throw std::invalid_argument("solve: gamma must be >= 0");
  using clock = std::chrono::steady_clock;
  MemTally mem;
  QpSolution sol;

  auto t0 = clock::now();
  const int m1 = static_cast<int>(F.cols());
  Matrix A = F.transpose() * F + gamma * smoothing_matrix(m1 - 1);
  Matrix B = F.transpose() * P;
  mem.add(MemTally::bytes_of(A) + MemTally::bytes_of(B));
  auto t1 = clock::now();
  sol.assembly_time = std::chrono::duration<double>(t1 - t0).count();

  MaskMatrix mask = mask_in ? *mask_in : MaskMatrix::Constant(m1, P.cols(), false);
  detail::EngineResult eng = detail::active_set_engine(A, B, mask, opts, mem);
  auto t2 = clock::now();
  sol.wall_time = std::chrono::duration<double>(t2 - t1).count();

  sol.povm = eng.X;
  sol.objective = objective_value(P, F, gamma, eng.X);
  sol.kkt_primal_residual = eng.primal;
  sol.kkt_dual_residual = eng.dual;
  sol.kkt_comp_residual = eng.comp;
  sol.iterations = eng.eqp_count;
  sol.converged = eng.converged;
  sol.peak_memory = mem.peak();
  sol.masked_fraction =
      static_cast<double>(mask.cast<int>().sum()) / static_cast<double>(mask.size());
  sol.residual_history = std::move(eng.history);
  return sol;
}

}  // namespace detail

// standard detector tomography: smoothed least squares over the full
// variable set, rows on the probability simplex
inline QpSolution solve_sdt(const Matrix& P, const Matrix& F, double gamma,
                            const qp::QpOptions& opts = {}) {
  return detail::solve_constrained(P, F, gamma, nullptr, opts);
}

// modified detector tomography: same objective, but variables whose
// unconstrained solution is nonpositive are fixed to zero first
inline QpSolution solve_mdt(const Matrix& P, const Matrix& F, double gamma,
                            const qp::QpOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  Matrix pi_tilde = unconstrained_solution(P, F, gamma);
  SparsityMask sm = sparsity_mask(pi_tilde);
  auto t1 = clock::now();
  QpSolution sol = detail::solve_constrained(P, F, gamma, &sm.mask, opts);
  // screening is part of this method's solve cost
  sol.wall_time += std::chrono::duration<double>(t1 - t0).count();
  sol.mask_fallback_rows = sm.fallback_rows;
  return sol;
}

// single-click probability with no photons at the input
inline double dark_count_probability(const Matrix& povm) {
  if (povm.cols() < 2)
    throw std::invalid_argument("dark_count_probability: need at least two outcomes");
  return povm(0, 1);
}

inline double povm_relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("povm_relative_error: shape mismatch");
  double denom = b.norm();
  if (denom == 0.0) throw std::invalid_argument("povm_relative_error: zero reference");
  return (a - b).norm() / denom;
}

struct GammaRow {
  double gamma = 0.0;
  double p_dark = 0.0;
  double objective = 0.0;
};

inline std::vector<GammaRow> gamma_sweep(const Matrix& P, const Matrix& F,
                                         const std::vector<double>& gammas,
                                         const qp::QpOptions& opts = {}) {
  if (gammas.empty()) throw std::invalid_argument("gamma_sweep: empty gamma list");
  std::vector<GammaRow> rows;
  rows.reserve(gammas.size());
  for (double g : gammas) {
    QpSolution sol = solve_mdt(P, F, g, opts);
    rows.push_back({g, dark_count_probability(sol.povm), sol.objective});
  }
  return rows;
}

}  // namespace pnrtomo::tomo
