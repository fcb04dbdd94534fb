#include "dmpc/qp.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dmpc::qp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kStepToBoundary = 0.995;
constexpr double kKktRegularization = 1e-10;
constexpr int kRefinementSteps = 4;
constexpr int kActiveSetMaxIter = 25;

double max_abs(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

double max_positive(const VectorXd& v) { return v.size() == 0 ? 0.0 : std::max(0.0, v.maxCoeff()); }

struct Iterate {
  VectorXd x;
  VectorXd lambda_in;
  VectorXd lambda_eq;
  double kkt = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

// Largest alpha in (0, 1] keeping v + alpha * dv >= 0.
double step_to_boundary(const VectorXd& v, const VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

// Solves [H+ridge, R'; R, 0][x; nu] = [-g; r] through a regularized
// factorization followed by iterative refinement. Tolerates rank-deficient R
// as long as the system is consistent.
bool solve_equality_kkt(const MatrixXd& Hr, const VectorXd& g, const MatrixXd& R, const VectorXd& r,
                        VectorXd& x, VectorXd& nu) {
  const Eigen::Index n = Hr.rows();
  const Eigen::Index k = R.rows();
  MatrixXd K = MatrixXd::Zero(n + k, n + k);
  K.topLeftCorner(n, n) = Hr;
  if (k > 0) {
    K.topRightCorner(n, k) = R.transpose();
    K.bottomLeftCorner(k, n) = R;
  }
  MatrixXd Kreg = K;
  Kreg.bottomRightCorner(k, k).diagonal().setConstant(-kKktRegularization);
  Eigen::PartialPivLU<MatrixXd> lu(Kreg);

  VectorXd rhs(n + k);
  rhs << -g, r;
  VectorXd sol = lu.solve(rhs);
  for (int it = 0; it < kRefinementSteps; ++it) {
    const VectorXd res = rhs - K * sol;
    sol += lu.solve(res);
  }
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  nu = sol.tail(k);
  return true;
}

// Primal-dual active-set iteration: guesses the active set from
// lambda + (A x - b) > 0, solves the equality-constrained KKT system and
// repeats until the KKT residual drops below tol.
std::optional<Iterate> active_set_polish(const QpProblem& p, const MatrixXd& Hr, const Iterate& start,
                                         double tol) {
  const int m = p.num_ineq();
  const int n = p.num_vars();
  const int neq = p.num_eq();

  std::vector<char> active(m, 0);
  {
    const VectorXd viol = p.A_in * start.x - p.b_in;
    for (int i = 0; i < m; ++i) active[i] = (start.lambda_in[i] + viol[i] > 0.0) ? 1 : 0;
  }

  std::optional<Iterate> best;
  for (int iter = 1; iter <= kActiveSetMaxIter; ++iter) {
    const int na = static_cast<int>(std::count(active.begin(), active.end(), 1));
    MatrixXd R(na + neq, n);
    VectorXd r(na + neq);
    std::vector<int> rows;
    rows.reserve(na);
    for (int i = 0, row = 0; i < m; ++i) {
      if (!active[i]) continue;
      R.row(row) = p.A_in.row(i);
      r[row] = p.b_in[i];
      rows.push_back(i);
      ++row;
    }
    if (neq > 0) {
      R.bottomRows(neq) = p.A_eq;
      r.tail(neq) = p.b_eq;
    }

    Iterate cur;
    VectorXd nu;
    if (!solve_equality_kkt(Hr, p.g, R, r, cur.x, nu)) break;
    cur.lambda_in = VectorXd::Zero(m);
    for (int a = 0; a < na; ++a) cur.lambda_in[rows[a]] = nu[a];
    cur.lambda_eq = nu.tail(neq);
    cur.kkt = kkt_residual(p, cur.x, cur.lambda_in, cur.lambda_eq);
    cur.iterations = iter;
    if (!best || cur.kkt < best->kkt) best = cur;
    if (cur.kkt <= tol) return cur;

    const VectorXd viol = p.A_in * cur.x - p.b_in;
    std::vector<char> next(m, 0);
    for (int i = 0; i < m; ++i) {
      next[i] = active[i] ? (cur.lambda_in[i] > 0.0 ? 1 : 0) : (viol[i] > 0.0 ? 1 : 0);
    }
    if (next == active) break;
    active = std::move(next);
  }
  return best;
}

// Normalized multipliers approaching a Farkas certificate: A'l + Aeq'y ~ 0 with b'l + beq'y < 0.
bool farkas_certificate(const QpProblem& p, const VectorXd& lam, const VectorXd& y) {
  const double scale = std::max(max_abs(lam), max_abs(y));
  if (!(scale > 1e6) || !std::isfinite(scale)) return false;
  const VectorXd ln = lam / scale;
  const VectorXd yn = y / scale;
  const double gap = p.b_in.dot(ln) + p.b_eq.dot(yn);
  const double dual = max_abs(p.A_in.transpose() * ln + p.A_eq.transpose() * yn);
  const double data = 1.0 + std::max(max_abs(p.b_in), max_abs(p.b_eq));
  return dual <= 1e-6 && gap < -1e-6 * data;
}

struct IpmResult {
  Iterate it;
  QpStatus status = QpStatus::MaxIter;
  double primal_residual = 0.0;
};

IpmResult interior_point(const QpProblem& p, const MatrixXd& Hr, const QpSettings& settings,
                         const VectorXd* x_init) {
  const int n = p.num_vars();
  const int m = p.num_ineq();
  const int neq = p.num_eq();

  IpmResult out;
  VectorXd x = (x_init && x_init->size() == n) ? *x_init : VectorXd::Zero(n);
  VectorXd y = VectorXd::Zero(neq);

  if (m == 0) {
    VectorXd nu;
    solve_equality_kkt(Hr, p.g, p.A_eq, p.b_eq, x, nu);
    out.it.x = x;
    out.it.lambda_in = VectorXd::Zero(0);
    out.it.lambda_eq = nu;
    out.it.kkt = kkt_residual(p, x, out.it.lambda_in, nu);
    out.it.iterations = 1;
    out.primal_residual = max_abs(p.A_eq * x - p.b_eq);
    out.status = out.it.kkt <= settings.tol ? QpStatus::Optimal : QpStatus::MaxIter;
    return out;
  }

  VectorXd s = (p.b_in - p.A_in * x).cwiseAbs().cwiseMax(1.0);
  VectorXd lam = VectorXd::Ones(m);

  double best_pres = std::numeric_limits<double>::infinity();
  int best_pres_iter = 0;

  for (int iter = 0; iter < settings.max_iter; ++iter) {
    const VectorXd rd = Hr * x + p.g + p.A_in.transpose() * lam + p.A_eq.transpose() * y;
    const VectorXd rp = p.A_in * x + s - p.b_in;
    const VectorXd re = p.A_eq * x - p.b_eq;
    const double mu = s.dot(lam) / m;
    const double pres = std::max(max_abs(rp), max_abs(re));

    out.it.x = x;
    out.it.lambda_in = lam;
    out.it.lambda_eq = y;
    out.it.iterations = iter;
    out.primal_residual = pres;
    out.it.kkt = kkt_residual(p, x, lam, y);
    if (out.it.kkt <= settings.tol) {
      out.status = QpStatus::Optimal;
      return out;
    }

    if (pres < 0.9 * best_pres) {
      best_pres = pres;
      best_pres_iter = iter;
    } else if (pres > settings.tol &&
               (iter - best_pres_iter >= settings.stall_window || farkas_certificate(p, lam, y))) {
      out.status = QpStatus::Infeasible;
      return out;
    }

    const VectorXd W = lam.cwiseQuotient(s);
    MatrixXd K = Hr;
    K.noalias() += p.A_in.transpose() * W.asDiagonal() * p.A_in;

    // Newton system reduced to (dx, dy); returns (dx, dy, dlam, ds) for a given complementarity target.
    Eigen::LDLT<MatrixXd> ldlt;
    Eigen::PartialPivLU<MatrixXd> lu;
    if (neq == 0) {
      ldlt.compute(K);
    } else {
      MatrixXd KKT(n + neq, n + neq);
      KKT.topLeftCorner(n, n) = K;
      KKT.topRightCorner(n, neq) = p.A_eq.transpose();
      KKT.bottomLeftCorner(neq, n) = p.A_eq;
      KKT.bottomRightCorner(neq, neq) = -kKktRegularization * MatrixXd::Identity(neq, neq);
      lu.compute(KKT);
    }

    auto newton = [&](const VectorXd& rc, VectorXd& dx, VectorXd& dy, VectorXd& dlam, VectorXd& ds) {
      const VectorXd rhs_x = -rd - p.A_in.transpose() * (W.cwiseProduct(rp) - rc.cwiseQuotient(s));
      if (neq == 0) {
        dx = ldlt.solve(rhs_x);
        dy.resize(0);
      } else {
        VectorXd rhs(n + neq);
        rhs << rhs_x, -re;
        const VectorXd sol = lu.solve(rhs);
        dx = sol.head(n);
        dy = sol.tail(neq);
      }
      dlam = W.cwiseProduct(p.A_in * dx + rp) - rc.cwiseQuotient(s);
      ds = -(rc + s.cwiseProduct(dlam)).cwiseQuotient(lam);
    };

    VectorXd dx, dy, dlam, ds;
    newton(s.cwiseProduct(lam), dx, dy, dlam, ds);
    const double alpha_aff = std::min(step_to_boundary(s, ds), step_to_boundary(lam, dlam));
    const double mu_aff = (s + alpha_aff * ds).dot(lam + alpha_aff * dlam) / m;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const VectorXd rc = s.cwiseProduct(lam) + ds.cwiseProduct(dlam) - VectorXd::Constant(m, sigma * mu);
    newton(rc, dx, dy, dlam, ds);
    const double alpha =
        std::min(1.0, kStepToBoundary * std::min(step_to_boundary(s, ds), step_to_boundary(lam, dlam)));
    if (!(dx.allFinite() && dlam.allFinite() && ds.allFinite())) {
      if (pres > settings.tol) out.status = QpStatus::Infeasible;
      return out;
    }

    x += alpha * dx;
    y += alpha * dy;
    lam += alpha * dlam;
    s += alpha * ds;
    s = s.cwiseMax(std::numeric_limits<double>::min());
    lam = lam.cwiseMax(std::numeric_limits<double>::min());
  }
  out.status = QpStatus::MaxIter;
  return out;
}

}  // namespace

QpProblem QpProblem::unconstrained(const MatrixXd& H, const VectorXd& g) {
  QpProblem p;
  p.H = H;
  p.g = g;
  p.A_in = MatrixXd::Zero(0, g.size());
  p.b_in = VectorXd::Zero(0);
  p.A_eq = MatrixXd::Zero(0, g.size());
  p.b_eq = VectorXd::Zero(0);
  return p;
}

void QpProblem::validate() const {
  const Eigen::Index n = g.size();
  if (H.rows() != n || H.cols() != n) throw ConfigError("qp: H must be n x n with n = size(g)");
  if (A_in.cols() != n || A_in.rows() != b_in.size())
    throw ConfigError("qp: inequality block dimensions are inconsistent");
  if (A_eq.cols() != n || A_eq.rows() != b_eq.size())
    throw ConfigError("qp: equality block dimensions are inconsistent");
  if (!H.allFinite() || !g.allFinite() || !A_in.allFinite() || !b_in.allFinite() || !A_eq.allFinite() ||
      !b_eq.allFinite())
    throw ConfigError("qp: non-finite problem data");
  if (n == 0) return;
  const double scale = std::max(H.cwiseAbs().maxCoeff(), 1e-300);
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) throw ConfigError("qp: H is not symmetric");
  const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues()[0];
  if (min_eig < -1e-9 * scale) throw ConfigError("qp: H is not positive semidefinite");
}

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal:
      return "optimal";
    case QpStatus::Infeasible:
      return "infeasible";
    case QpStatus::MaxIter:
      return "max_iter";
  }
  return "unknown";
}

int QpSolution::active_set_size(double tol) const {
  return static_cast<int>((lambda_in.array() > tol).count());
}

double kkt_residual(const QpProblem& p, const VectorXd& x, const VectorXd& lambda_in, const VectorXd& lambda_eq) {
  const VectorXd stat = p.H * x + p.g + p.A_in.transpose() * lambda_in + p.A_eq.transpose() * lambda_eq;
  const VectorXd slack = p.A_in * x - p.b_in;
  double res = max_abs(stat);
  res = std::max(res, max_positive(slack));
  res = std::max(res, max_abs(p.A_eq * x - p.b_eq));
  res = std::max(res, max_positive(-lambda_in));
  res = std::max(res, max_abs(lambda_in.cwiseProduct(slack)));
  return res;
}

double max_violation(const QpProblem& p, const VectorXd& x) {
  return std::max(max_positive(p.A_in * x - p.b_in), max_abs(p.A_eq * x - p.b_eq));
}

QpSolution solve(const QpProblem& problem, const QpSettings& settings, const WarmStart* warm) {
  if (!(settings.tol > 0.0)) throw ConfigError("qp: tolerance must be positive");
  problem.validate();

  const int n = problem.num_vars();
  const int m = problem.num_ineq();
  const int neq = problem.num_eq();
  MatrixXd Hr = problem.H;
  Hr.diagonal().array() += settings.ridge;

  auto finish = [&](const Iterate& it, QpStatus status, bool warm_used) {
    QpSolution sol;
    sol.x = it.x;
    sol.lambda_in = it.lambda_in;
    sol.lambda_eq = it.lambda_eq;
    sol.kkt_residual = it.kkt;
    sol.iterations = it.iterations;
    sol.status = status;
    sol.warm_started = warm_used;
    sol.primal_infeasibility = max_violation(problem, it.x);
    sol.objective = problem.objective(it.x);
    return sol;
  };

  if (warm && warm->x.size() == n && warm->lambda_in.size() == m && warm->lambda_eq.size() == neq) {
    Iterate start{warm->x, warm->lambda_in, warm->lambda_eq};
    if (auto polished = active_set_polish(problem, Hr, start, settings.tol);
        polished && polished->kkt <= settings.tol) {
      return finish(*polished, QpStatus::Optimal, true);
    }
  }

  const IpmResult ipm = interior_point(problem, Hr, settings, warm ? &warm->x : nullptr);
  Iterate best = ipm.it;
  if (auto polished = active_set_polish(problem, Hr, ipm.it, settings.tol); polished && polished->kkt < best.kkt) {
    polished->iterations += ipm.it.iterations;
    best = *polished;
  }
  if (best.kkt <= settings.tol) return finish(best, QpStatus::Optimal, false);

  QpSolution sol = finish(best, ipm.status == QpStatus::Optimal ? QpStatus::MaxIter : ipm.status, false);
  if (ipm.status == QpStatus::Infeasible) sol.primal_infeasibility = ipm.primal_residual;
  return sol;
}

namespace {

// Solves min ||eta||^2 s.t. A (x0 + G eta) <= b, Aeq (x0 + G eta) = beq and maps back.
Projection project_with_factor(const VectorXd& x0, const MatrixXd& G, const Polyhedron& set,
                               const QpSettings& settings) {
  const Eigen::Index n = x0.size();
  QpProblem p;
  p.H = 2.0 * MatrixXd::Identity(n, n);
  p.g = VectorXd::Zero(n);
  p.A_in = set.A_in * G;
  p.b_in = set.b_in - set.A_in * x0;
  p.A_eq = set.A_eq * G;
  p.b_eq = set.b_eq - set.A_eq * x0;
  const QpSolution sol = solve(p, settings);

  Projection out;
  out.status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  out.x = x0 + G * sol.x;
  out.distance_sq = sol.x.squaredNorm();
  return out;
}

void check_polyhedron(const Polyhedron& set, Eigen::Index n) {
  if (set.A_in.cols() != n || set.A_in.rows() != set.b_in.size() || set.A_eq.cols() != n ||
      set.A_eq.rows() != set.b_eq.size())
    throw ConfigError("project_weighted: polyhedron dimensions are inconsistent");
}

bool inside(const Polyhedron& set, const VectorXd& x) {
  return max_positive(set.A_in * x - set.b_in) <= 0.0 && max_abs(set.A_eq * x - set.b_eq) == 0.0;
}

}  // namespace

Projection project_weighted(const VectorXd& x0, const MatrixXd& M, const Polyhedron& set,
                            const QpSettings& settings) {
  const Eigen::Index n = x0.size();
  if (M.rows() != n || M.cols() != n) throw ConfigError("project_weighted: weight has wrong size");
  check_polyhedron(set, n);
  if (inside(set, x0)) return Projection{x0, QpStatus::Optimal, 0.0, 0.0};

  // ||x - x0||_M^2 = ||L'(x - x0)||^2 with M = L L'; substitute x = x0 + L^{-T} eta.
  Eigen::LLT<MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw ConfigError("project_weighted: weight is not positive definite");
  const MatrixXd G = llt.matrixU().solve(MatrixXd::Identity(n, n));
  return project_with_factor(x0, G, set, settings);
}

Projection project_covariance_metric(const VectorXd& x0, const MatrixXd& P, const Polyhedron& set,
                                     const QpSettings& settings) {
  const Eigen::Index n = x0.size();
  if (P.rows() != n || P.cols() != n) throw ConfigError("project_covariance_metric: covariance has wrong size");
  check_polyhedron(set, n);
  if (inside(set, x0)) return Projection{x0, QpStatus::Optimal, 0.0, 0.0};

  // P = G G' with G = Perm' L sqrt(D); directions with zero variance stay fixed.
  Eigen::LDLT<MatrixXd> ldlt(P);
  const VectorXd root = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  MatrixXd L = ldlt.matrixL();
  MatrixXd G = ldlt.transpositionsP().transpose() * (L * root.asDiagonal());
  return project_with_factor(x0, G, set, settings);
}

}  // namespace dmpc::qp
