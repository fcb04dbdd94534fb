#pragma once

#include <Eigen/Dense>

#include "dmpc/tmpc.hpp"

namespace dmpc::estimator {

enum class Correction {
  TwoStage,  // EKF update, then projection under the P^{-1} metric
  OneShot,   // single QP over the prior and the measurement
};

struct EstimatorConfig {
  double qe_x = 1e-6;      // process noise on the state block
  double qe_theta = 0.0;   // process noise on the parameter block
  double re = 0.1;         // measurement noise (times identity)
  double p0_x = 1.0;
  double p0_theta = 1e-4;
  bool freeze_theta = false;  // zero parameter covariance: the filter only tracks x
  Correction correction = Correction::TwoStage;
  qp::QpSettings qp;
};

struct EstimatorState {
  Eigen::VectorXd zeta;  // (x, theta)
  Eigen::MatrixXd P;
  Eigen::MatrixXd Qe;
  Eigen::MatrixXd Re;

  static EstimatorState init(const ModelParams& params, const Eigen::VectorXd& x0, const EstimatorConfig& cfg);
  int nx() const { return static_cast<int>(zeta.size() - theta_size); }
  Eigen::VectorXd x() const { return zeta.head(nx()); }
  Eigen::VectorXd theta() const { return zeta.tail(theta_size); }
  /// Model with the current parameter estimate; `structure` supplies dims and C.
  ModelParams model(const ModelParams& structure) const;

  int theta_size = 0;
};

struct Prediction {
  Eigen::VectorXd zeta;
  Eigen::MatrixXd P;
};

/// zeta~ = (step(x, u; theta), theta), P~ = J P J' + Qe, symmetrized.
Prediction predict(const EstimatorState& state, const ModelParams& structure, const Eigen::VectorXd& u);

/// K = P~ C~' (C~ P~ C~' + Re)^{-1}.
Eigen::MatrixXd gain(const Eigen::MatrixXd& P_pred, const Eigen::MatrixXd& C_tilde, const Eigen::MatrixXd& Re);

/// [C 0] over the augmented state.
Eigen::MatrixXd augmented_output(const ModelParams& structure);

/// Linear constraints A_zeta (x, theta) <= b on the next estimate.
struct FeasibilityPolytope {
  Eigen::MatrixXd A_zeta;
  Eigen::VectorXd b;
  Eigen::VectorXd z_plus;
  Eigen::VectorXd v_plus;
  struct Rows {
    int state = 0;        // f
    int disturbance = 0;  // 2^{n_u} f n_p
    int tube = 0;         // (N-1) f n_p
    int shifted = 0;      // 2 f n_p
    int rci = 0;          // f n_p v
    int total() const { return state + disturbance + tube + shifted + rci; }
  } rows;

  /// Largest row violation at zeta (negative inside).
  double violation(const Eigen::VectorXd& zeta) const;
  qp::Polyhedron polyhedron() const;
};

FeasibilityPolytope::Rows theta_polytope_rows(const ModelDims& dims, const PolytopeTemplate& tmpl, int N);

/**
 * Rows on (x_{t+1}, A_i, B_i) under which the shifted tube of `tube` stays a feasible
 * TMPC candidate. `d` is the disturbance vector at the current parameters.
 */
FeasibilityPolytope build_theta_polytope(const tmpc::TubeSolution& tube, const ModelParams& params,
                                         const ControlSets& sets, double gamma, const Eigen::VectorXd& d,
                                         tmpc::InitialRow initial_row = tmpc::InitialRow::Offset);

struct CorrectionResult {
  EstimatorState state;
  Eigen::VectorXd unconstrained;  // EKF mean before projection
  double projection_loss = 0.0;   // squared P^{-1}-distance moved by the projection
  double membership = 0.0;        // largest Theta row violation of the accepted estimate
  bool fallback = false;          // parameters kept, only x projected
  qp::QpStatus status = qp::QpStatus::Optimal;
};

/// Plain EKF measurement update.
EstimatorState correct(const EstimatorState& state, const Prediction& pred, const ModelParams& structure,
                       const Eigen::VectorXd& y);

/// EKF update followed by the projection onto Theta (or the one-shot QP, per cfg).
CorrectionResult constrained_correct(const EstimatorState& state, const Prediction& pred, const ModelParams& structure,
                                     const Eigen::VectorXd& y, const FeasibilityPolytope& theta_poly,
                                     const EstimatorConfig& cfg);

}  // namespace dmpc::estimator
