#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "dmpc/polytope.hpp"

namespace dmpc {

struct ModelDims {
  int nx = 2;
  int nu = 1;
  int np = 3;
  int nh = 3;
  int ny = 1;

  /// n_p n_x^2 + n_p n_x n_u + n_h (n_x + n_u) + n_h + n_p n_h + n_p
  int n_theta() const { return np * nx * nx + np * nx * nu + nh * (nx + nu) + nh + np * nh + np; }

  // Offsets into the flat parameter vector.
  int offset_A(int i) const { return i * nx * nx; }
  int offset_B(int i) const { return np * nx * nx + i * nx * nu; }
  int offset_W1() const { return np * nx * (nx + nu); }
  int offset_b1() const { return offset_W1() + nh * (nx + nu); }
  int offset_W2() const { return offset_b1() + nh; }
  int offset_b2() const { return offset_W2() + np * nh; }

  bool operator==(const ModelDims&) const = default;
};

/**
 * Parameters of the qLPV model
 *
 *     x+ = sum_i p_i(x, u) (A_i x + B_i u),   y = C x,
 *     p(x, u) = softmax(W2 swish(W1 [x; u] + b1) + b2).
 *
 * The flat vector theta stores every A_i row-major, then every B_i, then
 * W1 (row-major), b1, W2 (row-major), b2. C is fixed and not part of theta.
 */
struct ModelParams {
  ModelDims dims;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd C;

  static ModelParams zeros(const ModelDims& dims);
  static ModelParams unpack(const ModelDims& dims, const Eigen::VectorXd& theta, const Eigen::MatrixXd& C);
  Eigen::VectorXd pack() const;

  /// Throws ConfigError if any block has the wrong size or C lacks full row rank.
  void validate() const;
};

/// Rows of the identity selecting the first n_y states.
Eigen::MatrixXd selection_output(int ny, int nx);

double swish(double a);
double swish_derivative(double a);
Eigen::VectorXd softmax(const Eigen::VectorXd& o);

/// Raw network output N(x, u) before the softmax.
Eigen::VectorXd network_output(const ModelParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

Eigen::VectorXd scheduling(const ModelParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

Eigen::VectorXd step(const ModelParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

inline Eigen::VectorXd output(const ModelParams& params, const Eigen::VectorXd& x) { return params.C * x; }

/// Partial derivatives of step() with respect to the state and to theta.
struct StepJacobian {
  Eigen::MatrixXd wrt_x;      // n_x x n_x
  Eigen::MatrixXd wrt_theta;  // n_x x n_theta
};

StepJacobian step_jacobian(const ModelParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

/// Jacobian of zeta = (x, theta) -> (step(x, u; theta), theta).
Eigen::MatrixXd augmented_jacobian(const ModelParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

/// d = max_i beta |F B_i| eps_u (elementwise).
Eigen::VectorXd disturbance_vector(const ModelParams& params, const PolytopeTemplate& tmpl, double beta,
                                   const Eigen::VectorXd& eps_u);

// JSON record {n_x, n_u, n_p, n_h, theta, C}.
std::string to_json(const ModelParams& params);
ModelParams model_from_json(const std::string& text);
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

}  // namespace dmpc
