#include "dmpc/tmpc.hpp"

#include <algorithm>

namespace dmpc::tmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ControllerConfig ControllerConfig::defaults(const ModelParams& params, const PolytopeTemplate& tmpl, int N,
                                            double gamma) {
  ControllerConfig cfg;
  cfg.N = N;
  cfg.gamma = gamma;
  const int n = params.dims.nx + params.dims.nu;
  cfg.Q = MatrixXd::Identity(n, n);
  cfg.P = cfg.Q / (1.0 - gamma * gamma);
  cfg.rci_weights = rci::Weights::defaults(rci::Layout::of(params, tmpl), params.dims.ny);
  return cfg;
}

void ControllerConfig::validate(const ModelParams& params, const PolytopeTemplate& tmpl) const {
  if (N < 1) throw ConfigError("horizon N must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  const int n = params.dims.nx + params.dims.nu;
  if (Q.rows() != n || Q.cols() != n || P.rows() != n || P.cols() != n)
    throw ConfigError("Q and P must be (n_x + n_u) square");
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("Q and P must be symmetric");
  if (Eigen::SelfAdjointEigenSolver<MatrixXd>(Q).eigenvalues().minCoeff() <= 0.0)
    throw ConfigError("Q must be positive definite");
  const MatrixXd gap = P - Q / (1.0 - gamma * gamma);
  if (Eigen::SelfAdjointEigenSolver<MatrixXd>(gap).eigenvalues().minCoeff() < -1e-9)
    throw ConfigError("P must dominate Q / (1 - gamma^2)");
  rci_weights.validate(rci::Layout::of(params, tmpl), params.dims.ny);
}

RowCounts row_counts(const ModelParams& params, const ControlSets& sets, int N) {
  const int f = sets.tmpl.num_facets(), v = sets.tmpl.num_vertices(), np = params.dims.np;
  RowCounts rc;
  rc.tube = N * f * np;
  rc.output = (N + 1) * v * static_cast<int>(sets.Y.H.rows());
  rc.input = (N + 1) * v * static_cast<int>(sets.U.H.rows());
  rc.terminal = f * np;
  rc.initial = f;
  rc.rci = rci::row_counts(params, sets).total();
  return rc;
}

TubeQp build_tmpc_qp(const VectorXd& x_hat, const ModelParams& params, const VectorXd& y_ref,
                     const ControllerConfig& cfg, const ControlSets& sets) {
  cfg.validate(params, sets.tmpl);
  if (x_hat.size() != params.dims.nx) throw ConfigError("state estimate has the wrong dimension");
  if (y_ref.size() != params.dims.ny) throw ConfigError("reference has the wrong dimension");
  const auto& T = sets.tmpl;
  const MatrixXd& F = T.F();
  const Layout L(cfg.N, rci::Layout::of(params, T));
  const auto& R = L.r;
  const int nx = L.nx, nu = L.nu, f = R.f, nv = R.v, N = cfg.N;
  const int zs = L.xr() + R.z_s(), vs = L.xr() + R.v_s(), sc = L.xr() + R.s(), cc = L.xr() + R.c(),
            qc = L.xr() + R.q();
  const MatrixXd If = MatrixXd::Identity(f, f);

  TubeQp out{qp::QpProblem{}, 0.0, L, row_counts(params, sets, N)};
  auto& p = out.problem;
  const int m = out.rows.total();
  p.A_in = MatrixXd::Zero(m, L.size());
  p.b_in = VectorXd::Zero(m);
  int r = 0;

  // F(A_i(z_k - z_s) + B_i(v_k - v_s)) <= q + F(z_{k+1} - z_s)
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < params.dims.np; ++i) {
      const MatrixXd FA = F * params.A[i], FB = F * params.B[i];
      auto rows = p.A_in.middleRows(r, f);
      rows.middleCols(L.z(k), nx) += FA;
      rows.middleCols(L.v(k), nu) += FB;
      rows.middleCols(L.z(k + 1), nx) -= F;
      rows.middleCols(zs, nx) += F - FA;
      rows.middleCols(vs, nu) -= FB;
      rows.middleCols(qc, f) -= If;
      r += f;
    }
  }
  // C(z_k + V_j s) in Y
  const MatrixXd HC = sets.Y.H * params.C;
  const int my = static_cast<int>(sets.Y.h.size());
  for (int k = 0; k <= N; ++k) {
    for (int j = 0; j < nv; ++j) {
      p.A_in.block(r, L.z(k), my, nx) = HC;
      p.A_in.block(r, sc, my, f) = HC * T.V(j);
      p.b_in.segment(r, my) = sets.Y.h;
      r += my;
    }
  }
  // v_k + U_j c in (1 - beta) U
  const int mu = static_cast<int>(sets.U.h.size());
  for (int k = 0; k <= N; ++k) {
    for (int j = 0; j < nv; ++j) {
      p.A_in.block(r, L.v(k), mu, nu) = sets.U.H;
      p.A_in.block(r, cc, mu, nv * nu) = sets.U.H * T.U(j);
      p.b_in.segment(r, mu) = (1.0 - sets.beta) * sets.U.h;
      r += mu;
    }
  }
  // F(A_i(z_N - z_s) + B_i(v_N - v_s)) <= q + gamma F(z_N - z_s)
  for (int i = 0; i < params.dims.np; ++i) {
    const MatrixXd G = F * params.A[i] - cfg.gamma * F, FB = F * params.B[i];
    auto rows = p.A_in.middleRows(r, f);
    rows.middleCols(L.z(N), nx) += G;
    rows.middleCols(zs, nx) -= G;
    rows.middleCols(L.v(N), nu) += FB;
    rows.middleCols(vs, nu) -= FB;
    rows.middleCols(qc, f) -= If;
    r += f;
  }
  // F x_hat <= s + F z_0  (or q + F z_0)
  p.A_in.block(r, L.z(0), f, nx) = -F;
  p.A_in.block(r, cfg.initial_row == InitialRow::Offset ? sc : qc, f, f) = -If;
  p.b_in.segment(r, f) = -F * x_hat;
  r += f;
  // invariance block of the terminal set
  const VectorXd d = disturbance_vector(params, T, sets.beta, sets.eps_u);
  const auto blk = rci::constraint_block(params, sets, d);
  p.A_in.block(r, L.xr(), blk.rows(), R.size()) = blk.A;
  p.b_in.segment(r, blk.rows()) = blk.b;
  r += blk.rows();

  // Objective: tracking terms plus the RCI cost.
  const int nzv = nx + nu;
  p.H = MatrixXd::Zero(L.size(), L.size());
  p.g = VectorXd::Zero(L.size());
  for (int k = 0; k <= N; ++k) {
    MatrixXd D = MatrixXd::Zero(nzv, L.size());
    D.block(0, L.z(k), nzv, nzv).setIdentity();
    D.block(0, zs, nzv, nzv) -= MatrixXd::Identity(nzv, nzv);
    p.H += 2.0 * D.transpose() * (k < N ? cfg.Q : cfg.P) * D;
  }
  const auto rc = rci::cost(cfg.rci_weights, params.C, y_ref, R);
  p.H.block(L.xr(), L.xr(), R.size(), R.size()) += rc.H;
  p.g.segment(L.xr(), R.size()) = rc.g;
  out.cost_constant = rc.constant;
  p.A_eq = MatrixXd::Zero(0, L.size());
  p.b_eq = VectorXd::Zero(0);
  return out;
}

TubeSolution unstack(const VectorXd& x, const Layout& L) {
  TubeSolution out;
  out.z.resize(L.N + 1, L.nx);
  out.v.resize(L.N + 1, L.nu);
  for (int k = 0; k <= L.N; ++k) {
    out.z.row(k) = x.segment(L.z(k), L.nx).transpose();
    out.v.row(k) = x.segment(L.v(k), L.nu).transpose();
  }
  out.rci = rci::RciSolution::unstack(x.segment(L.xr(), L.r.size()), L.r);
  out.x = x;
  return out;
}

TubeSolution solve_tmpc(const VectorXd& x_hat, const ModelParams& params, const VectorXd& y_ref,
                        const ControllerConfig& cfg, const ControlSets& sets, const qp::WarmStart* warm) {
  const auto tq = build_tmpc_qp(x_hat, params, y_ref, cfg, sets);
  const auto sol = qp::solve(tq.problem, cfg.qp, warm);
  TubeSolution out = unstack(sol.x, tq.layout);
  out.lambda_in = sol.lambda_in;
  out.status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  out.cost = sol.objective + tq.cost_constant;
  out.iterations = sol.iterations;
  out.active_set = sol.active_set_size();
  out.warm_started = sol.warm_started;
  out.max_row_violation = qp::max_violation(tq.problem, sol.x);
  out.rci.status = sol.status;
  out.rci.kkt_residual = sol.kkt_residual;
  return out;
}

ShiftedTube candidate_shift(const TubeSolution& sol, double gamma) {
  const int N = sol.horizon();
  ShiftedTube out;
  out.z_plus = sol.rci.z_s + gamma * (sol.z.row(N).transpose() - sol.rci.z_s);
  out.v_plus = sol.rci.v_s + gamma * (sol.v.row(N).transpose() - sol.rci.v_s);
  out.z.resize(N + 1, sol.z.cols());
  out.v.resize(N + 1, sol.v.cols());
  for (int k = 0; k < N; ++k) {
    out.z.row(k) = sol.z.row(k + 1);
    out.v.row(k) = sol.v.row(k + 1);
  }
  out.z.row(N) = out.z_plus.transpose();
  out.v.row(N) = out.v_plus.transpose();
  return out;
}

VectorXd stack_candidate(const ShiftedTube& shift, const rci::RciSolution& rci, const Layout& L) {
  VectorXd x(L.size());
  for (int k = 0; k <= L.N; ++k) {
    x.segment(L.z(k), L.nx) = shift.z.row(k).transpose();
    x.segment(L.v(k), L.nu) = shift.v.row(k).transpose();
  }
  x.segment(L.xr(), L.r.size()) = rci.stacked();
  return x;
}

qp::WarmStart warm_start_from(const TubeSolution& sol, double gamma, const Layout& L) {
  qp::WarmStart w;
  w.x = stack_candidate(candidate_shift(sol, gamma), sol.rci, L);
  w.lambda_in = sol.lambda_in;
  w.lambda_eq = VectorXd::Zero(0);
  return w;
}

NominalInput nominal_input(const TubeSolution& sol, const VectorXd& x_hat, const PolytopeTemplate& tmpl, int k) {
  const ParamSet set{sol.z.row(k).transpose(), sol.rci.s};
  const auto w = barycentric_lambda(set, x_hat, tmpl);
  NominalInput out;
  out.lambda = w.lambda;
  out.relaxed = w.relaxed;
  out.u_c = sol.v.row(k).transpose();
  for (int j = 0; j < tmpl.num_vertices(); ++j) out.u_c += w.lambda[j] * (tmpl.U(j) * sol.rci.c);
  return out;
}

double tube_constraint_violation(const TubeSolution& sol, const ModelParams& params, const ControlSets& sets) {
  const auto& T = sets.tmpl;
  double worst = 0.0;
  for (int k = 0; k <= sol.horizon(); ++k) {
    for (int j = 0; j < T.num_vertices(); ++j) {
      const VectorXd x = sol.z.row(k).transpose() + T.V(j) * sol.rci.s;
      worst = std::max(worst, sets.Y.violation(params.C * x));
      const VectorXd u = sol.v.row(k).transpose() + T.U(j) * sol.rci.c;
      worst = std::max(worst, (sets.U.H * u - (1.0 - sets.beta) * sets.U.h).maxCoeff());
    }
  }
  return worst;
}

}  // namespace dmpc::tmpc
