#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dmpc/plant.hpp"
#include "dmpc/qlpv.hpp"
#include "dmpc/tmpc.hpp"

namespace dmpc::sysid {

/// Input/output record; row t of u_seq and y_seq belong to the same sample.
struct IoDataset {
  Eigen::MatrixXd u_seq;  // T x n_u
  Eigen::MatrixXd y_seq;  // T x n_y
  double scale = 1.0;

  int length() const { return static_cast<int>(u_seq.rows()); }
  void validate() const;
};

/// CSV with header t,u,y (or t,u0,u1,...,y0,y1,... for vector signals).
IoDataset read_csv(const std::string& path, double scale = 1.0);
void write_csv(const IoDataset& data, const std::string& path);

struct ExcitationConfig {
  int length = 100;
  int hold = 5;
  double u_min = -1.0;
  double u_max = 1.0;
};

/// Drive the plant from rest with piecewise-constant uniform inputs and record the scaled output.
IoDataset generate_dataset(const plant::PlantConfig& cfg, const ExcitationConfig& ex, std::uint64_t seed);

/// Open-loop rollout of the model from x0; returns the predicted outputs (T x n_y).
Eigen::MatrixXd simulate(const ModelParams& params, const IoDataset& data, const Eigen::VectorXd& x0);

/// Mean over samples of the squared output error; +inf if the rollout diverges.
double simulate_mse(const ModelParams& params, const IoDataset& data, const Eigen::VectorXd& x0);

struct LossGradient {
  double mse = 0.0;
  Eigen::VectorXd gradient;  // d mse / d theta
};

/// Loss and its gradient by reverse accumulation through the unrolled rollout.
LossGradient mse_gradient(const ModelParams& params, const IoDataset& data, const Eigen::VectorXd& x0);

struct TrainConfig {
  ModelDims dims;
  double target = 0.01;
  int max_epochs = 20000;
  double weight_decay = 1e-4;
  double armijo_c = 1e-4;
  double initial_step = 1e-2;
  double a_noise = 0.01;
  double weight_noise = 0.1;
  /// Stop once the relative decrease over 500 epochs falls below this.
  double stall_tol = 1e-7;
};

struct FitResult {
  ModelParams params;
  double train_mse = 0.0;
  int epochs = 0;
  bool reached_target = false;
  std::vector<double> loss_history;  // regularized objective after each accepted step
};

ModelParams initial_guess(const ModelDims& dims, const TrainConfig& cfg, std::uint64_t seed);

/// Full-batch gradient descent with Armijo backtracking on mse + weight_decay * |theta|^2.
FitResult fit_initial_model(const IoDataset& data, const TrainConfig& cfg, std::uint64_t seed);

struct GateReport {
  bool feasible = false;
  qp::QpStatus status = qp::QpStatus::MaxIter;
  double max_violation = 0.0;
  double cost = 0.0;
  double rci_verify_worst = 0.0;
};

/// One TMPC solve at (x0, params); feasible iff the QP is solved to optimality.
GateReport feasibility_gate(const ModelParams& params, const tmpc::ControllerConfig& cfg, const ControlSets& sets,
                            const Eigen::VectorXd& x0, const Eigen::VectorXd& y_ref);

struct IdentifyResult {
  FitResult fit;
  GateReport gate;
  int attempts = 0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

/**
 * Train, then gate. On a gate failure retrain with weight decay 1e-3 and seed + attempt,
 * up to `max_retries` more times. The last attempt is returned whether or not it passed.
 */
IdentifyResult identify(const IoDataset& data, TrainConfig train, const ControlSets& sets, int N, double gamma,
                        std::uint64_t seed, int max_retries = 3);

}  // namespace dmpc::sysid
