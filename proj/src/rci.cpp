#include "dmpc/rci.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace dmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ControlSets ControlSets::boxes(int nx, const VectorXd& y_lo, const VectorXd& y_hi, const VectorXd& u_lo,
                               const VectorXd& u_hi, double beta) {
  const int nu = static_cast<int>(u_lo.size());
  return ControlSets{PolytopeTemplate::box(nx, nu), HPolytope::box(y_lo, y_hi), HPolytope::box(u_lo, u_hi),
                     u_lo.cwiseAbs().cwiseMax(u_hi.cwiseAbs()), beta};
}

void ControlSets::validate(const ModelParams& params) const {
  if (tmpl.nx() != params.dims.nx || tmpl.nu() != params.dims.nu)
    throw ConfigError("template dimensions do not match the model");
  if (Y.dim() != params.dims.ny || Y.H.rows() != Y.h.size()) throw ConfigError("output set has the wrong dimension");
  if (U.dim() != params.dims.nu || U.H.rows() != U.h.size()) throw ConfigError("input set has the wrong dimension");
  if (eps_u.size() != params.dims.nu || eps_u.minCoeff() < 0.0) throw ConfigError("eps_u must be a nonnegative n_u vector");
  if (beta < 0.0 || beta >= 1.0) throw ConfigError("beta must lie in [0, 1)");
  if (U.h.minCoeff() < 0.0) throw ConfigError("input set must contain the origin");
}

namespace rci {

namespace {

void check_weight(const MatrixXd& W, int n, const char* name) {
  if (W.rows() != n || W.cols() != n) throw ConfigError(std::string(name) + " has the wrong size");
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigError(std::string(name) + " must be symmetric");
  if (Eigen::SelfAdjointEigenSolver<MatrixXd>(W).eigenvalues().minCoeff() <= 0.0)
    throw ConfigError(std::string(name) + " must be positive definite");
}

}  // namespace

Weights Weights::defaults(const Layout& l, int ny, double q1) {
  Weights w;
  w.Q1 = q1 * MatrixXd::Identity(ny, ny);
  VectorXd diag(l.size());
  diag.segment(l.z_s(), l.nx + l.nu).setConstant(1e-6);
  diag.segment(l.s(), l.f).setConstant(10.0);
  diag.segment(l.c(), l.v * l.nu).setConstant(1.0);
  diag.segment(l.q(), l.f).setConstant(1.0);
  w.Q2 = diag.asDiagonal();
  return w;
}

void Weights::validate(const Layout& l, int ny) const {
  check_weight(Q1, ny, "Q1");
  check_weight(Q2, l.size(), "Q2");
}

RowCounts row_counts(const ModelParams& params, const ControlSets& sets) {
  const int f = sets.tmpl.num_facets(), v = sets.tmpl.num_vertices();
  RowCounts rc;
  rc.dynamics = f * params.dims.np * v;
  rc.output = v * static_cast<int>(sets.Y.H.rows());
  rc.input = v * static_cast<int>(sets.U.H.rows());
  rc.sign = 2 * f + static_cast<int>(sets.tmpl.E().rows());
  return rc;
}

LinearBlock constraint_block(const ModelParams& params, const ControlSets& sets, const VectorXd& d) {
  sets.validate(params);
  const auto& T = sets.tmpl;
  const Layout l = Layout::of(params, T);
  const MatrixXd& F = T.F();
  const int f = l.f;
  const auto rc = row_counts(params, sets);

  LinearBlock blk;
  blk.A = MatrixXd::Zero(rc.total(), l.size());
  blk.b = VectorXd::Zero(rc.total());
  int r = 0;

  // F(A_i(z_s + V_j s) + B_i(v_s + U_j c)) + d + q <= s + F z_s
  for (int i = 0; i < params.dims.np; ++i) {
    const MatrixXd FA = F * params.A[i];
    const MatrixXd FB = F * params.B[i];
    for (int j = 0; j < l.v; ++j) {
      auto rows = blk.A.middleRows(r, f);
      rows.middleCols(l.z_s(), l.nx) = FA - F;
      rows.middleCols(l.v_s(), l.nu) = FB;
      rows.middleCols(l.s(), f) = FA * T.V(j) - MatrixXd::Identity(f, f);
      rows.middleCols(l.c(), l.v * l.nu) = FB * T.U(j);
      rows.middleCols(l.q(), f) = MatrixXd::Identity(f, f);
      blk.b.segment(r, f) = -d;
      r += f;
    }
  }
  // H_y C (z_s + V_j s) <= h_y
  const MatrixXd HC = sets.Y.H * params.C;
  for (int j = 0; j < l.v; ++j) {
    const int m = static_cast<int>(sets.Y.h.size());
    blk.A.block(r, l.z_s(), m, l.nx) = HC;
    blk.A.block(r, l.s(), m, f) = HC * T.V(j);
    blk.b.segment(r, m) = sets.Y.h;
    r += m;
  }
  // H_u (v_s + U_j c) <= (1 - beta) h_u
  for (int j = 0; j < l.v; ++j) {
    const int m = static_cast<int>(sets.U.h.size());
    blk.A.block(r, l.v_s(), m, l.nu) = sets.U.H;
    blk.A.block(r, l.c(), m, l.v * l.nu) = sets.U.H * T.U(j);
    blk.b.segment(r, m) = (1.0 - sets.beta) * sets.U.h;
    r += m;
  }
  // q >= 0, s >= 0, E s <= 0
  blk.A.block(r, l.q(), f, f) = -MatrixXd::Identity(f, f);
  r += f;
  blk.A.block(r, l.s(), f, f) = -MatrixXd::Identity(f, f);
  r += f;
  blk.A.block(r, l.s(), T.E().rows(), f) = T.E();
  r += static_cast<int>(T.E().rows());
  return blk;
}

QuadraticCost cost(const Weights& w, const MatrixXd& C, const VectorXd& y_ref, const Layout& l) {
  QuadraticCost out;
  const double nv = l.v;
  out.H = 2.0 * w.Q2;
  out.H.block(l.z_s(), l.z_s(), l.nx, l.nx) += 2.0 * nv * C.transpose() * w.Q1 * C;
  out.g = VectorXd::Zero(l.size());
  out.g.segment(l.z_s(), l.nx) = -2.0 * nv * C.transpose() * w.Q1 * y_ref;
  out.constant = nv * y_ref.dot(w.Q1 * y_ref);
  return out;
}

VectorXd RciSolution::stacked() const {
  VectorXd x(z_s.size() + v_s.size() + s.size() + c.size() + q.size());
  x << z_s, v_s, s, c, q;
  return x;
}

RciSolution RciSolution::unstack(const VectorXd& xr, const Layout& l) {
  RciSolution out;
  out.z_s = xr.segment(l.z_s(), l.nx);
  out.v_s = xr.segment(l.v_s(), l.nu);
  out.s = xr.segment(l.s(), l.f);
  out.c = xr.segment(l.c(), l.v * l.nu);
  out.q = xr.segment(l.q(), l.f);
  return out;
}

RciSolution solve_optimal_rci(const ModelParams& params, const VectorXd& y_ref, const Weights& weights,
                              const ControlSets& sets) {
  const Layout l = Layout::of(params, sets.tmpl);
  weights.validate(l, params.dims.ny);
  if (y_ref.size() != params.dims.ny) throw ConfigError("reference has the wrong dimension");
  const VectorXd d = disturbance_vector(params, sets.tmpl, sets.beta, sets.eps_u);
  const auto blk = constraint_block(params, sets, d);
  const auto q = cost(weights, params.C, y_ref, l);

  qp::QpProblem p;
  p.H = q.H;
  p.g = q.g;
  p.A_in = blk.A;
  p.b_in = blk.b;
  p.A_eq = MatrixXd::Zero(0, l.size());
  p.b_eq = VectorXd::Zero(0);
  const auto sol = qp::solve(p);

  RciSolution out = RciSolution::unstack(sol.x, l);
  out.status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  out.cost = sol.objective + q.constant;
  out.max_row_violation = qp::max_violation(p, sol.x);
  return out;
}

double VerifyReport::worst() const {
  return std::max({vertex_violation, sample_violation, output_violation, input_violation});
}

VerifyReport verify_rci(const RciSolution& sol, const ModelParams& params, const ControlSets& sets, int n_samples,
                        std::uint64_t seed) {
  sets.validate(params);
  const auto& T = sets.tmpl;
  const int nv = T.num_vertices(), np = params.dims.np, nu = params.dims.nu;
  const ParamSet set{sol.z_s, sol.s};
  auto excess = [&](const VectorXd& x) { return (T.F() * (x - sol.z_s) - sol.s).maxCoeff(); };

  // Disturbance vertices beta B_i (sign pattern o eps_u).
  std::vector<VectorXd> w_vertices;
  for (int i = 0; i < np; ++i) {
    for (int sigma = 0; sigma < (1 << nu); ++sigma) {
      VectorXd up(nu);
      for (int k = 0; k < nu; ++k) up[k] = ((sigma >> k) & 1 ? -1.0 : 1.0) * sets.eps_u[k];
      w_vertices.push_back(sets.beta * params.B[i] * up);
    }
  }

  VerifyReport rep;
  rep.vertex_violation = -std::numeric_limits<double>::infinity();
  std::vector<VectorXd> xv(nv), uv(nv);
  for (int j = 0; j < nv; ++j) {
    xv[j] = T.vertex(set, j);
    uv[j] = sol.v_s + T.U(j) * sol.c;
    rep.output_violation = std::max(rep.output_violation, sets.Y.violation(params.C * xv[j]));
    rep.input_violation = std::max(rep.input_violation, sets.U.violation(uv[j] / (1.0 - sets.beta)));
    for (int i = 0; i < np; ++i) {
      const VectorXd nominal = params.A[i] * xv[j] + params.B[i] * uv[j];
      for (const auto& w : w_vertices) {
        rep.vertex_violation = std::max(rep.vertex_violation, excess(nominal + w));
        ++rep.triples;
      }
    }
  }
  rep.vertex_violation = std::max(rep.vertex_violation, 0.0);

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto simplex = [&](int n) {
    VectorXd w = VectorXd::NullaryExpr(n, [&] { return expo(rng); });
    return VectorXd(w / w.sum());
  };
  for (int k = 0; k < n_samples; ++k) {
    const VectorXd lam = simplex(nv);
    const VectorXd p = simplex(np);
    VectorXd x = VectorXd::Zero(params.dims.nx), u = VectorXd::Zero(nu);
    for (int j = 0; j < nv; ++j) {
      x += lam[j] * xv[j];
      u += lam[j] * uv[j];
    }
    const VectorXd up = sets.beta * sets.eps_u.cwiseProduct(VectorXd::NullaryExpr(nu, [&] { return unit(rng); }));
    VectorXd next = VectorXd::Zero(params.dims.nx);
    for (int i = 0; i < np; ++i) next += p[i] * (params.A[i] * x + params.B[i] * (u + up));
    rep.sample_violation = std::max(rep.sample_violation, excess(next));
    ++rep.samples;
  }
  return rep;
}

}  // namespace rci
}  // namespace dmpc
