#pragma once

#include <Eigen/Dense>

#include <optional>

#include "dmpc/rci.hpp"

namespace dmpc::tmpc {

/// Which offset bounds the initial state inside the first tube set.
enum class InitialRow {
  Offset,  // F x_hat <= s + F z_0
  Slack,   // F x_hat <= q + F z_0
};

struct ControllerConfig {
  int N = 2;
  double gamma = 0.95;
  Eigen::MatrixXd Q;  // (n_x + n_u) square
  Eigen::MatrixXd P;  // (n_x + n_u) square
  rci::Weights rci_weights;
  InitialRow initial_row = InitialRow::Offset;
  qp::QpSettings qp;

  /// Q = I, P = Q / (1 - gamma^2), default RCI weights.
  static ControllerConfig defaults(const ModelParams& params, const PolytopeTemplate& tmpl, int N = 2,
                                   double gamma = 0.95);
  /// N >= 1, gamma in (0, 1), Q > 0, P - Q / (1 - gamma^2) >= -1e-9.
  void validate(const ModelParams& params, const PolytopeTemplate& tmpl) const;
};

/// Column offsets of the stacked decision vector (z_0, v_0, ..., z_N, v_N, x^r).
struct Layout {
  int N, nx, nu;
  rci::Layout r;

  Layout(int N_, const rci::Layout& rl) : N(N_), nx(rl.nx), nu(rl.nu), r(rl) {}
  int z(int k) const { return k * (nx + nu); }
  int v(int k) const { return k * (nx + nu) + nx; }
  int xr() const { return (N + 1) * (nx + nu); }
  int size() const { return xr() + r.size(); }
};

struct RowCounts {
  int tube = 0;       // N f n_p
  int output = 0;     // (N+1) v rows(H_y)
  int input = 0;      // (N+1) v rows(H_u)
  int terminal = 0;   // f n_p
  int initial = 0;    // f
  int rci = 0;
  int total() const { return tube + output + input + terminal + initial + rci; }
};

RowCounts row_counts(const ModelParams& params, const ControlSets& sets, int N);

/// The QP together with the constant dropped from its objective.
struct TubeQp {
  qp::QpProblem problem;
  double cost_constant = 0.0;
  Layout layout;
  RowCounts rows;
};

TubeQp build_tmpc_qp(const Eigen::VectorXd& x_hat, const ModelParams& params, const Eigen::VectorXd& y_ref,
                     const ControllerConfig& cfg, const ControlSets& sets);

struct TubeSolution {
  Eigen::MatrixXd z;  // (N+1) x n_x
  Eigen::MatrixXd v;  // (N+1) x n_u
  rci::RciSolution rci;
  double cost = 0.0;
  qp::QpStatus status = qp::QpStatus::MaxIter;
  double kkt_residual = 0.0;
  double max_row_violation = 0.0;
  int iterations = 0;
  int active_set = 0;
  bool warm_started = false;
  Eigen::VectorXd x;          // stacked primal solution
  Eigen::VectorXd lambda_in;  // multipliers, reused for warm starts

  bool optimal() const { return status == qp::QpStatus::Optimal; }
  int horizon() const { return static_cast<int>(z.rows()) - 1; }
};

TubeSolution unstack(const Eigen::VectorXd& x, const Layout& layout);

TubeSolution solve_tmpc(const Eigen::VectorXd& x_hat, const ModelParams& params, const Eigen::VectorXd& y_ref,
                        const ControllerConfig& cfg, const ControlSets& sets,
                        const qp::WarmStart* warm = nullptr);

/// Tube centers and inputs shifted one step, with the contracted terminal pair (z+, v+).
struct ShiftedTube {
  Eigen::MatrixXd z;  // (N+1) x n_x
  Eigen::MatrixXd v;  // (N+1) x n_u
  Eigen::VectorXd z_plus;
  Eigen::VectorXd v_plus;
};

/// z_k <- z_{k+1}, v_k <- v_{k+1}, last entry z+ = z_s + gamma (z_N - z_s) (same for v).
ShiftedTube candidate_shift(const TubeSolution& sol, double gamma);

/// Stacked decision vector of the shifted tube with the previous RCI variables.
Eigen::VectorXd stack_candidate(const ShiftedTube& shift, const rci::RciSolution& rci, const Layout& layout);

/// Warm start for the next solve built from the shifted candidate.
qp::WarmStart warm_start_from(const TubeSolution& sol, double gamma, const Layout& layout);

struct NominalInput {
  Eigen::VectorXd u_c;
  Eigen::VectorXd lambda;
  bool relaxed = false;
};

/// u_c = v_0 + sum_j lambda_j c_j with lambda the minimum-norm barycentric weights of x_hat in X(z_0, s).
NominalInput nominal_input(const TubeSolution& sol, const Eigen::VectorXd& x_hat, const PolytopeTemplate& tmpl,
                           int k = 0);

/// L = C - r.
inline double lyapunov_value(const TubeSolution& sol, double r_value) { return sol.cost - r_value; }

/// Largest violation of the output and input rows of the tube (all k and vertices).
double tube_constraint_violation(const TubeSolution& sol, const ModelParams& params, const ControlSets& sets);

}  // namespace dmpc::tmpc
