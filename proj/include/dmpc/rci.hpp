#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "dmpc/polytope.hpp"
#include "dmpc/qlpv.hpp"
#include "dmpc/qp.hpp"

namespace dmpc {

/// Constraint sets and exploration budget shared by the RCI and tube problems.
struct ControlSets {
  PolytopeTemplate tmpl;
  HPolytope Y;            // output constraints
  HPolytope U;            // input constraints
  Eigen::VectorXd eps_u;  // componentwise bound on |u| over U
  double beta = 0.0;

  /// Box template, interval Y and U; eps_u from the U bounds.
  static ControlSets boxes(int nx, const Eigen::VectorXd& y_lo, const Eigen::VectorXd& y_hi,
                           const Eigen::VectorXd& u_lo, const Eigen::VectorXd& u_hi, double beta);
  void validate(const ModelParams& params) const;
};

namespace rci {

/// Offsets of (z_s, v_s, s, c, q) inside the stacked vector x^r.
struct Layout {
  int nx = 0, nu = 0, f = 0, v = 0;

  Layout(int nx_, int nu_, int f_, int v_) : nx(nx_), nu(nu_), f(f_), v(v_) {}
  static Layout of(const ModelParams& params, const PolytopeTemplate& tmpl) {
    return Layout(params.dims.nx, params.dims.nu, tmpl.num_facets(), tmpl.num_vertices());
  }

  int z_s() const { return 0; }
  int v_s() const { return nx; }
  int s() const { return nx + nu; }
  int c() const { return nx + nu + f; }
  int q() const { return nx + nu + f + v * nu; }
  int size() const { return nx + nu + 2 * f + v * nu; }
};

struct Weights {
  Eigen::MatrixXd Q1;  // n_y x n_y
  Eigen::MatrixXd Q2;  // size of x^r

  /// Q1 = q1 I, Q2 = blkdiag(1e-6 I, 10 I_f, I_{v n_u}, I_f).
  static Weights defaults(const Layout& layout, int ny, double q1 = 10.0);
  void validate(const Layout& layout, int ny) const;
};

/// Linear rows A x^r <= b.
struct LinearBlock {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  int rows() const { return static_cast<int>(b.size()); }
};

struct RowCounts {
  int dynamics = 0;  // f n_p v
  int output = 0;    // v rows(H_y)
  int input = 0;     // v rows(H_u)
  int sign = 0;      // q >= 0 and s >= 0 (plus cone rows E s <= 0)
  int total() const { return dynamics + output + input + sign; }
};

RowCounts row_counts(const ModelParams& params, const ControlSets& sets);

/// Invariance, output, input and sign rows over x^r with the disturbance vector d.
LinearBlock constraint_block(const ModelParams& params, const ControlSets& sets, const Eigen::VectorXd& d);

/// Quadratic form of the RCI cost: l(x^r) = 0.5 x'Hx + g'x + constant.
struct QuadraticCost {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double constant = 0.0;
};

/// sum_j |y_ref - C z_s|^2_{Q1} + |x^r|^2_{Q2}.
QuadraticCost cost(const Weights& w, const Eigen::MatrixXd& C, const Eigen::VectorXd& y_ref, const Layout& layout);

struct RciSolution {
  Eigen::VectorXd z_s, v_s, s, c, q;
  double cost = 0.0;
  qp::QpStatus status = qp::QpStatus::MaxIter;
  double kkt_residual = 0.0;
  /// Largest violation of the constraint block at the returned point.
  double max_row_violation = 0.0;

  bool optimal() const { return status == qp::QpStatus::Optimal; }
  Eigen::VectorXd stacked() const;
  static RciSolution unstack(const Eigen::VectorXd& xr, const Layout& layout);
};

/// Optimal RCI set r(theta, y_ref) = min l(x^r) over the constraint block.
RciSolution solve_optimal_rci(const ModelParams& params, const Eigen::VectorXd& y_ref, const Weights& weights,
                              const ControlSets& sets);

struct VerifyReport {
  /// Worst F(x+ - z_s) - s over (vertex, mode, disturbance vertex) triples.
  double vertex_violation = 0.0;
  /// Same quantity over random hull samples of state, scheduling and disturbance.
  double sample_violation = 0.0;
  double output_violation = 0.0;
  double input_violation = 0.0;
  int triples = 0;
  int samples = 0;

  double worst() const;
};

/// Checks A_i x + B_i u + w in X(z_s, s) for every vertex state with its vertex input.
VerifyReport verify_rci(const RciSolution& sol, const ModelParams& params, const ControlSets& sets, int n_samples,
                        std::uint64_t seed = 1);

}  // namespace rci
}  // namespace dmpc
