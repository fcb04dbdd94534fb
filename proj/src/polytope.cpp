#include "dmpc/polytope.hpp"

#include <algorithm>
#include <string>

namespace dmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPenaltyWeight = 1e6;

MatrixXd box_facets(int nx) {
  MatrixXd F(2 * nx, nx);
  F << MatrixXd::Identity(nx, nx), -MatrixXd::Identity(nx, nx);
  return F;
}

std::vector<MatrixXd> box_vertex_maps(int nx) {
  const int nv = 1 << nx;
  std::vector<MatrixXd> V;
  V.reserve(nv);
  for (int j = 0; j < nv; ++j) {
    MatrixXd Vj = MatrixXd::Zero(nx, 2 * nx);
    for (int k = 0; k < nx; ++k) {
      const bool negative = (j >> (nx - 1 - k)) & 1;
      if (negative) {
        Vj(k, k + nx) = -1.0;
      } else {
        Vj(k, k) = 1.0;
      }
    }
    V.push_back(std::move(Vj));
  }
  return V;
}

}  // namespace

HPolytope HPolytope::box(const VectorXd& lo, const VectorXd& hi) {
  if (lo.size() != hi.size() || lo.size() == 0) throw ConfigError("box bounds must have equal nonzero length");
  if ((hi - lo).minCoeff() < 0.0) throw ConfigError("box lower bound exceeds upper bound");
  const auto n = lo.size();
  HPolytope out;
  out.H.resize(2 * n, n);
  out.H << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
  out.h.resize(2 * n);
  out.h << hi, -lo;
  return out;
}

bool HPolytope::contains(const VectorXd& y, double tol) const { return violation(y) <= tol; }

double HPolytope::violation(const VectorXd& y) const {
  if (h.size() == 0) return 0.0;
  return std::max(0.0, (H * y - h).maxCoeff());
}

PolytopeTemplate PolytopeTemplate::box(int nx, int nu) {
  if (nx < 1) throw ConfigError("box template needs n_x >= 1");
  if (nx > 16) throw ConfigError("box template limited to n_x <= 16");
  return PolytopeTemplate(box_facets(nx), MatrixXd::Zero(0, 2 * nx), box_vertex_maps(nx), nu);
}

PolytopeTemplate::PolytopeTemplate(MatrixXd F, MatrixXd E, std::vector<MatrixXd> V, int nu)
    : F_(std::move(F)), E_(std::move(E)), V_(std::move(V)), nx_(static_cast<int>(F_.cols())), nu_(nu) {
  if (nu_ < 1) throw ConfigError("template needs n_u >= 1");
  if (nx_ < 1 || F_.rows() != 2 * nx_ || F_ != box_facets(nx_))
    throw ConfigError("only the box template F = [I; -I] is supported (got F of size " +
                      std::to_string(F_.rows()) + "x" + std::to_string(F_.cols()) + ")");
  if (E_.cols() != F_.rows()) throw ConfigError("cone matrix E must have f columns");
  const auto expected = box_vertex_maps(nx_);
  if (V_.size() != expected.size()) throw ConfigError("box template needs 2^n_x vertex maps");
  for (std::size_t j = 0; j < V_.size(); ++j)
    if (V_[j] != expected[j]) throw ConfigError("vertex maps do not match the box template ordering");

  const int nv = num_vertices();
  U_.reserve(nv);
  for (int j = 0; j < nv; ++j) {
    MatrixXd Uj = MatrixXd::Zero(nu_, nv * nu_);
    Uj.block(0, j * nu_, nu_, nu_).setIdentity();
    U_.push_back(std::move(Uj));
  }
}

bool PolytopeTemplate::in_cone(const VectorXd& s, double tol) const {
  if (s.size() != num_facets()) return false;
  if (s.minCoeff() < -tol) return false;
  return E_.rows() == 0 || (E_ * s).maxCoeff() <= tol;
}

bool PolytopeTemplate::contains(const ParamSet& set, const VectorXd& x, double tol) const {
  return ((F_ * (x - set.z)) - set.s).maxCoeff() <= tol;
}

MatrixXd PolytopeTemplate::vertices(const ParamSet& set) const {
  MatrixXd out(nx_, num_vertices());
  for (int j = 0; j < num_vertices(); ++j) out.col(j) = vertex(set, j);
  return out;
}

BarycentricWeights barycentric_lambda(const ParamSet& set, const VectorXd& x, const PolytopeTemplate& tmpl) {
  const int nv = tmpl.num_vertices();
  const int nx = tmpl.nx();
  MatrixXd Vs(nx, nv);
  for (int j = 0; j < nv; ++j) Vs.col(j) = tmpl.V(j) * set.s;
  const VectorXd target = x - set.z;

  // min ||lambda||^2  s.t.  lambda >= 0, 1'lambda = 1, Vs lambda = x - z
  qp::QpProblem p;
  p.H = 2.0 * MatrixXd::Identity(nv, nv);
  p.g = VectorXd::Zero(nv);
  p.A_in = -MatrixXd::Identity(nv, nv);
  p.b_in = VectorXd::Zero(nv);
  p.A_eq.resize(nx + 1, nv);
  p.A_eq << Vs, MatrixXd::Ones(1, nv);
  p.b_eq.resize(nx + 1);
  p.b_eq << target, 1.0;

  BarycentricWeights out;
  const auto sol = qp::solve(p);
  if (sol.optimal()) {
    out.lambda = sol.x;
  } else {
    // Equality relaxed into a stiff penalty; still a simplex point.
    qp::QpProblem r;
    r.H = 2.0 * (MatrixXd::Identity(nv, nv) + kPenaltyWeight * Vs.transpose() * Vs);
    r.g = -2.0 * kPenaltyWeight * Vs.transpose() * target;
    r.A_in = p.A_in;
    r.b_in = p.b_in;
    r.A_eq = MatrixXd::Ones(1, nv);
    r.b_eq = VectorXd::Ones(1);
    const auto relaxed = qp::solve(r);
    out.lambda = relaxed.x;
    out.relaxed = true;
  }
  out.reconstruction_error = (Vs * out.lambda - target).norm();
  return out;
}

}  // namespace dmpc
