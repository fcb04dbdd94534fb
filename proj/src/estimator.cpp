#include "dmpc/estimator.hpp"

#include <algorithm>

namespace dmpc::estimator {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd symmetrize(const MatrixXd& P) { return 0.5 * (P + P.transpose()); }

// P = G G' for a PSD P; columns for zero pivots vanish.
MatrixXd covariance_factor(const MatrixXd& P) {
  Eigen::LDLT<MatrixXd> ldlt(P);
  const VectorXd root = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd L = ldlt.matrixL();
  return ldlt.transpositionsP().transpose() * (L * root.asDiagonal());
}

// Coefficients over (x, theta) of F (A_i w + B_i m).
MatrixXd mode_rows(const MatrixXd& F, const ModelDims& dims, int i, const VectorXd& w, const VectorXd& m) {
  const int f = static_cast<int>(F.rows());
  MatrixXd out = MatrixXd::Zero(f, dims.nx + dims.n_theta());
  for (int a = 0; a < dims.nx; ++a) {
    for (int b = 0; b < dims.nx; ++b) out.col(dims.nx + dims.offset_A(i) + a * dims.nx + b) = F.col(a) * w[b];
    for (int b = 0; b < dims.nu; ++b) out.col(dims.nx + dims.offset_B(i) + a * dims.nu + b) = F.col(a) * m[b];
  }
  return out;
}

}  // namespace

EstimatorState EstimatorState::init(const ModelParams& params, const VectorXd& x0, const EstimatorConfig& cfg) {
  params.validate();
  if (x0.size() != params.dims.nx) throw ConfigError("initial state has the wrong dimension");
  if (cfg.re <= 0.0 || cfg.qe_x < 0.0 || cfg.qe_theta < 0.0 || cfg.p0_x < 0.0 || cfg.p0_theta < 0.0)
    throw ConfigError("estimator covariances must be nonnegative and Re positive");
  const int nx = params.dims.nx, nt = params.dims.n_theta();
  EstimatorState s;
  s.theta_size = nt;
  s.zeta.resize(nx + nt);
  s.zeta << x0, params.pack();
  VectorXd p0(nx + nt), qe(nx + nt);
  p0 << VectorXd::Constant(nx, cfg.p0_x), VectorXd::Constant(nt, cfg.freeze_theta ? 0.0 : cfg.p0_theta);
  qe << VectorXd::Constant(nx, cfg.qe_x), VectorXd::Constant(nt, cfg.freeze_theta ? 0.0 : cfg.qe_theta);
  s.P = p0.asDiagonal();
  s.Qe = qe.asDiagonal();
  s.Re = cfg.re * MatrixXd::Identity(params.dims.ny, params.dims.ny);
  return s;
}

ModelParams EstimatorState::model(const ModelParams& structure) const {
  return ModelParams::unpack(structure.dims, theta(), structure.C);
}

Prediction predict(const EstimatorState& state, const ModelParams& structure, const VectorXd& u) {
  const ModelParams m = state.model(structure);
  const VectorXd x = state.x();
  Prediction out;
  out.zeta = state.zeta;
  out.zeta.head(state.nx()) = step(m, x, u);
  const MatrixXd J = augmented_jacobian(m, x, u);
  out.P = symmetrize(J * state.P * J.transpose() + state.Qe);
  return out;
}

MatrixXd gain(const MatrixXd& P_pred, const MatrixXd& C_tilde, const MatrixXd& Re) {
  const MatrixXd S = C_tilde * P_pred * C_tilde.transpose() + Re;
  return S.llt().solve(C_tilde * P_pred.transpose()).transpose();
}

MatrixXd augmented_output(const ModelParams& structure) {
  MatrixXd Ct = MatrixXd::Zero(structure.dims.ny, structure.dims.nx + structure.dims.n_theta());
  Ct.leftCols(structure.dims.nx) = structure.C;
  return Ct;
}

double FeasibilityPolytope::violation(const VectorXd& zeta) const { return (A_zeta * zeta - b).maxCoeff(); }

qp::Polyhedron FeasibilityPolytope::polyhedron() const {
  return qp::Polyhedron{A_zeta, b, MatrixXd::Zero(0, A_zeta.cols()), VectorXd::Zero(0)};
}

FeasibilityPolytope::Rows theta_polytope_rows(const ModelDims& dims, const PolytopeTemplate& tmpl, int N) {
  const int f = tmpl.num_facets();
  FeasibilityPolytope::Rows r;
  r.state = f;
  r.disturbance = (1 << dims.nu) * f * dims.np;
  r.tube = (N - 1) * f * dims.np;
  r.shifted = 2 * f * dims.np;
  r.rci = f * dims.np * tmpl.num_vertices();
  return r;
}

FeasibilityPolytope build_theta_polytope(const tmpc::TubeSolution& tube, const ModelParams& params,
                                         const ControlSets& sets, double gamma, const VectorXd& d,
                                         tmpc::InitialRow initial_row) {
  const auto& dims = params.dims;
  const auto& T = sets.tmpl;
  const MatrixXd& F = T.F();
  const int N = tube.horizon(), f = T.num_facets(), nx = dims.nx;
  if (N < 1 || tube.z.cols() != nx || tube.v.rows() != N + 1 || tube.v.cols() != dims.nu)
    throw ConfigError("tube solution does not match the model");
  if (d.size() != f) throw ConfigError("disturbance vector has the wrong size");
  const auto& R = tube.rci;
  const auto shift = tmpc::candidate_shift(tube, gamma);

  FeasibilityPolytope out;
  out.rows = theta_polytope_rows(dims, T, N);
  out.z_plus = shift.z_plus;
  out.v_plus = shift.v_plus;
  out.A_zeta = MatrixXd::Zero(out.rows.total(), nx + dims.n_theta());
  out.b = VectorXd::Zero(out.rows.total());
  int r = 0;
  auto add = [&](const MatrixXd& A, const VectorXd& b) {
    out.A_zeta.middleRows(r, A.rows()) = A;
    out.b.segment(r, b.size()) = b;
    r += static_cast<int>(A.rows());
  };

  // F x <= s + F z_1  (or q + F z_1)
  {
    MatrixXd A = MatrixXd::Zero(f, out.A_zeta.cols());
    A.leftCols(nx) = F;
    add(A, (initial_row == tmpc::InitialRow::Offset ? R.s : R.q) + F * tube.z.row(1).transpose());
  }
  // beta F B_i (sigma o eps_u) <= d for every sign pattern sigma
  for (int i = 0; i < dims.np; ++i) {
    for (int sigma = 0; sigma < (1 << dims.nu); ++sigma) {
      VectorXd m(dims.nu);
      for (int k = 0; k < dims.nu; ++k) m[k] = ((sigma >> k) & 1 ? -1.0 : 1.0) * sets.beta * sets.eps_u[k];
      add(mode_rows(F, dims, i, VectorXd::Zero(nx), m), d);
    }
  }
  // tube rows of the shifted sequence, k = 1..N-1
  for (int k = 1; k < N; ++k) {
    const VectorXd w = tube.z.row(k).transpose() - R.z_s, m = tube.v.row(k).transpose() - R.v_s;
    const VectorXd rhs = R.q + F * (tube.z.row(k + 1).transpose() - R.z_s);
    for (int i = 0; i < dims.np; ++i) add(mode_rows(F, dims, i, w, m), rhs);
  }
  // z_N -> z+ and the terminal rows at (z+, v+)
  {
    const VectorXd w = tube.z.row(N).transpose() - R.z_s, m = tube.v.row(N).transpose() - R.v_s;
    const VectorXd rhs = R.q + F * (shift.z_plus - R.z_s);
    for (int i = 0; i < dims.np; ++i) add(mode_rows(F, dims, i, w, m), rhs);
    const VectorXd wp = shift.z_plus - R.z_s, mp = shift.v_plus - R.v_s;
    const VectorXd rhs_p = R.q + gamma * F * (shift.z_plus - R.z_s);
    for (int i = 0; i < dims.np; ++i) add(mode_rows(F, dims, i, wp, mp), rhs_p);
  }
  // F(A_i(z_s + V_j s) + B_i(v_s + U_j c)) <= s + F z_s - d - q
  const VectorXd rhs = R.s + F * R.z_s - d - R.q;
  for (int i = 0; i < dims.np; ++i) {
    for (int j = 0; j < T.num_vertices(); ++j) {
      add(mode_rows(F, dims, i, R.z_s + T.V(j) * R.s, R.v_s + T.U(j) * R.c), rhs);
    }
  }
  return out;
}

EstimatorState correct(const EstimatorState& state, const Prediction& pred, const ModelParams& structure,
                       const VectorXd& y) {
  const MatrixXd Ct = augmented_output(structure);
  const MatrixXd K = gain(pred.P, Ct, state.Re);
  EstimatorState out = state;
  out.zeta = pred.zeta + K * (y - Ct * pred.zeta);
  const MatrixXd I = MatrixXd::Identity(pred.P.rows(), pred.P.cols());
  out.P = symmetrize((I - K * Ct) * pred.P);
  return out;
}

CorrectionResult constrained_correct(const EstimatorState& state, const Prediction& pred, const ModelParams& structure,
                                     const VectorXd& y, const FeasibilityPolytope& theta_poly,
                                     const EstimatorConfig& cfg) {
  CorrectionResult res;
  res.state = correct(state, pred, structure, y);
  res.unconstrained = res.state.zeta;
  const auto set = theta_poly.polyhedron();

  if (cfg.correction == Correction::TwoStage) {
    const auto proj = qp::project_covariance_metric(res.unconstrained, res.state.P, set, cfg.qp);
    res.status = proj.status;
    if (proj.status == qp::QpStatus::Optimal) {
      res.state.zeta = proj.x;
      res.projection_loss = proj.distance_sq;
    }
  } else {
    // zeta = zeta~ + G eta with P~ = G G'; minimize |eta|^2 + |y - C~ zeta|^2_{Re^{-1}}.
    const MatrixXd Ct = augmented_output(structure);
    const MatrixXd G = covariance_factor(pred.P);
    const MatrixXd Ri = state.Re.inverse();
    const MatrixXd CG = Ct * G;
    const VectorXd innov = y - Ct * pred.zeta;
    qp::QpProblem p;
    p.H = 2.0 * (MatrixXd::Identity(G.cols(), G.cols()) + CG.transpose() * Ri * CG);
    p.g = -2.0 * CG.transpose() * Ri * innov;
    p.A_in = set.A_in * G;
    p.b_in = set.b_in - set.A_in * pred.zeta;
    p.A_eq = MatrixXd::Zero(0, G.cols());
    p.b_eq = VectorXd::Zero(0);
    const auto sol = qp::solve(p, cfg.qp);
    res.status = sol.status;
    if (sol.optimal()) {
      res.state.zeta = pred.zeta + G * sol.x;
      const VectorXd moved = res.state.zeta - res.unconstrained;
      const auto ldlt = res.state.P.ldlt();
      res.projection_loss = std::max(0.0, moved.dot(ldlt.solve(moved)));
    }
  }

  res.membership = theta_poly.violation(res.state.zeta);
  if (res.status != qp::QpStatus::Optimal || res.membership > 1e-7) {
    // Keep the previous parameters and project the state block alone.
    const int nx = state.nx();
    res.fallback = true;
    VectorXd zeta = res.unconstrained;
    zeta.tail(state.theta_size) = pred.zeta.tail(state.theta_size);
    const int f = theta_poly.rows.state;
    const MatrixXd Ax = theta_poly.A_zeta.topLeftCorner(f, nx);
    const VectorXd bx = theta_poly.b.head(f);
    const qp::Polyhedron xs{Ax, bx, MatrixXd::Zero(0, nx), VectorXd::Zero(0)};
    const MatrixXd Pxx = res.state.P.topLeftCorner(nx, nx);
    const auto proj = qp::project_weighted(zeta.head(nx), Pxx.inverse(), xs, cfg.qp);
    res.status = proj.status;
    zeta.head(nx) = proj.x;
    res.state.zeta = zeta;
    res.projection_loss = (zeta - res.unconstrained).head(nx).dot(Pxx.ldlt().solve((zeta - res.unconstrained).head(nx)));
    res.membership = theta_poly.violation(zeta);
  }
  return res;
}

}  // namespace dmpc::estimator
