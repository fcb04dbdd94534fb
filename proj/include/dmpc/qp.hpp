#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>

namespace dmpc {

/// Raised for malformed inputs (dimension mismatch, indefinite Hessian, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace qp {

/**
 * Dense convex QP
 *
 *     min  0.5 x'Hx + g'x
 *     s.t. A_in x <= b_in,  A_eq x = b_eq
 *
 * Either constraint block may have zero rows.
 */
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;

  /// Problem with n variables and no constraints.
  static QpProblem unconstrained(const Eigen::MatrixXd& H, const Eigen::VectorXd& g);

  int num_vars() const { return static_cast<int>(g.size()); }
  int num_ineq() const { return static_cast<int>(b_in.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + g.dot(x); }

  /// Throws ConfigError when dimensions disagree or H is not PSD within tolerance.
  void validate() const;
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

std::string to_string(QpStatus status);

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_in;
  Eigen::VectorXd lambda_eq;
  double kkt_residual = 0.0;
  /// max(A_in x - b_in)_+ together with |A_eq x - b_eq|; the infeasibility certificate when status == Infeasible.
  double primal_infeasibility = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool warm_started = false;
  QpStatus status = QpStatus::MaxIter;

  bool optimal() const { return status == QpStatus::Optimal; }
  /// Number of inequality rows with a positive multiplier.
  int active_set_size(double tol = 1e-9) const;
};

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 500;
  /// Iterations without primal-residual progress before declaring infeasibility.
  int stall_window = 50;
  double ridge = 1e-10;
};

struct WarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_in;
  Eigen::VectorXd lambda_eq;
};

/// Max-norm KKT residual (stationarity, primal feasibility, dual sign, complementarity).
double kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& lambda_in, const Eigen::VectorXd& lambda_eq);

/// Largest violation of the constraints of `problem` at x (0 when feasible).
double max_violation(const QpProblem& problem, const Eigen::VectorXd& x);

/**
 * Primal-dual interior point (Mehrotra predictor-corrector) followed by a
 * primal-dual active-set polish. When a warm start is provided the active-set
 * iteration is tried first, which finishes in one or two iterations for a
 * problem that is unchanged or only slightly perturbed.
 */
QpSolution solve(const QpProblem& problem, const QpSettings& settings = {},
                 const WarmStart* warm = nullptr);

inline QpSolution solve(const QpProblem& problem, double tol, int max_iter) {
  QpSettings settings;
  settings.tol = tol;
  settings.max_iter = max_iter;
  return solve(problem, settings);
}

/// Polyhedron {x : A_in x <= b_in, A_eq x = b_eq}.
struct Polyhedron {
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
};

struct Projection {
  Eigen::VectorXd x;
  QpStatus status = QpStatus::MaxIter;
  double kkt_residual = 0.0;
  /// ||x - x0||_M^2
  double distance_sq = 0.0;
};

/// argmin ||x - x0||_M^2 over the polyhedron; M must be symmetric positive definite.
Projection project_weighted(const Eigen::VectorXd& x0, const Eigen::MatrixXd& M,
                            const Polyhedron& feasible_set, const QpSettings& settings = {});

/// Same projection with M = P^{-1} given through the covariance P, which may be
/// singular: coordinates P does not excite are held at their x0 values.
Projection project_covariance_metric(const Eigen::VectorXd& x0, const Eigen::MatrixXd& P,
                                     const Polyhedron& feasible_set, const QpSettings& settings = {});

}  // namespace qp
}  // namespace dmpc
