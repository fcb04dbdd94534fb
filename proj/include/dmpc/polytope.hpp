#pragma once

#include <Eigen/Dense>

#include <vector>

#include "dmpc/qp.hpp"

namespace dmpc {

/// Constraint set {y : H y <= h} (output set Y or input set U).
struct HPolytope {
  Eigen::MatrixXd H;
  Eigen::VectorXd h;

  static HPolytope box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
  int dim() const { return static_cast<int>(H.cols()); }
  bool contains(const Eigen::VectorXd& y, double tol = 1e-9) const;
  /// Largest violation max(H y - h)_+.
  double violation(const Eigen::VectorXd& y) const;
};

/// Polytope X(z, s) = z + {x : F x <= s}.
struct ParamSet {
  Eigen::VectorXd z;
  Eigen::VectorXd s;
};

/**
 * Configuration-constrained template: fixed facet normals F together with the
 * offset cone E (s >= 0, E s <= 0) on which the vertex maps V_j give
 * X(z, s) = CH{z + V_j s}. Only the box template F = [I; -I] is supported;
 * there the cone needs no rows beyond s >= 0.
 *
 * Vertex j has coordinate k equal to +s_k when bit (n_x - 1 - k) of j is
 * clear and -s_{k + n_x} otherwise, so vertex 0 is the (+, ..., +) corner.
 */
class PolytopeTemplate {
 public:
  static PolytopeTemplate box(int nx, int nu);

  /// Accepts only matrices equal to the box template of the same size.
  PolytopeTemplate(Eigen::MatrixXd F, Eigen::MatrixXd E, std::vector<Eigen::MatrixXd> V, int nu);

  const Eigen::MatrixXd& F() const { return F_; }
  const Eigen::MatrixXd& E() const { return E_; }
  const Eigen::MatrixXd& V(int j) const { return V_[j]; }
  const std::vector<Eigen::MatrixXd>& V() const { return V_; }
  /// Selector extracting the j-th n_u block of the stacked vertex inputs c.
  const Eigen::MatrixXd& U(int j) const { return U_[j]; }

  int nx() const { return nx_; }
  int nu() const { return nu_; }
  int num_facets() const { return static_cast<int>(F_.rows()); }
  int num_vertices() const { return static_cast<int>(V_.size()); }

  /// s >= -tol and E s <= tol.
  bool in_cone(const Eigen::VectorXd& s, double tol = 1e-9) const;

  bool contains(const ParamSet& set, const Eigen::VectorXd& x, double tol = 1e-9) const;

  Eigen::VectorXd vertex(const ParamSet& set, int j) const { return set.z + V_[j] * set.s; }

  /// Vertices as columns (n_x x v).
  Eigen::MatrixXd vertices(const ParamSet& set) const;

 private:
  PolytopeTemplate() = default;

  Eigen::MatrixXd F_;
  Eigen::MatrixXd E_;
  std::vector<Eigen::MatrixXd> V_;
  std::vector<Eigen::MatrixXd> U_;
  int nx_ = 0;
  int nu_ = 0;
};

struct BarycentricWeights {
  Eigen::VectorXd lambda;
  /// Set when the exact QP failed and the penalty relaxation was used.
  bool relaxed = false;
  double reconstruction_error = 0.0;
};

/// Minimum-norm simplex weights with x = z + sum_j lambda_j V_j s.
BarycentricWeights barycentric_lambda(const ParamSet& set, const Eigen::VectorXd& x,
                                      const PolytopeTemplate& tmpl);

}  // namespace dmpc
