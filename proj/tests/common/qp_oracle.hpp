#pragma once

// Test-only reference solvers, independent of the interior-point/active-set path.

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <random>

#include "dmpc/qp.hpp"

namespace dmpc::testing {

/// Solves a strictly convex QP by enumerating every inequality active set,
/// solving the corresponding KKT system and keeping the best point that is
/// primal feasible with nonnegative multipliers.
inline std::optional<Eigen::VectorXd> enumerate_active_sets(const qp::QpProblem& p) {
  const int n = p.num_vars();
  const int m = p.num_ineq();
  const int neq = p.num_eq();
  std::optional<Eigen::VectorXd> best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i)
      if (mask & (1u << i)) rows.push_back(i);
    const int k = static_cast<int>(rows.size()) + neq;
    if (k > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    K.topLeftCorner(n, n) = p.H;
    rhs.head(n) = -p.g;
    for (int a = 0; a < static_cast<int>(rows.size()); ++a) {
      K.block(n + a, 0, 1, n) = p.A_in.row(rows[a]);
      K.block(0, n + a, n, 1) = p.A_in.row(rows[a]).transpose();
      rhs[n + a] = p.b_in[rows[a]];
    }
    for (int e = 0; e < neq; ++e) {
      const int r = n + static_cast<int>(rows.size()) + e;
      K.block(r, 0, 1, n) = p.A_eq.row(e);
      K.block(0, r, n, 1) = p.A_eq.row(e).transpose();
      rhs[r] = p.b_eq[e];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    bool ok = true;
    for (int a = 0; a < static_cast<int>(rows.size()); ++a) ok = ok && sol[n + a] >= -1e-10;
    if (m > 0) ok = ok && (p.A_in * x - p.b_in).maxCoeff() <= 1e-10;
    if (!ok) continue;
    const double obj = p.objective(x);
    if (obj < best_obj) {
      best_obj = obj;
      best = x;
    }
  }
  return best;
}

/// Random feasible strictly convex QP with n variables and m inequalities.
inline qp::QpProblem random_strictly_convex_qp(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto rand_mat = [&](int r, int c) {
    Eigen::MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = unif(rng);
    return M;
  };
  const Eigen::MatrixXd L = rand_mat(n, n);
  qp::QpProblem p;
  p.H = L * L.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.g = 3.0 * rand_mat(n, 1);
  p.A_in = rand_mat(m, n);
  const Eigen::VectorXd x_feas = rand_mat(n, 1);
  p.b_in = p.A_in * x_feas + 0.5 * (rand_mat(m, 1).array() + 1.0).matrix();
  p.A_eq = Eigen::MatrixXd::Zero(0, n);
  p.b_eq = Eigen::VectorXd::Zero(0);
  return p;
}

}  // namespace dmpc::testing
