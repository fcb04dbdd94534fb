#pragma once

#include <random>

#include "dmpc/qlpv.hpp"
#include "dmpc/rci.hpp"

namespace testmodels {

/// Three stable modes with a mildly nonlinear scheduling network (n_x=2, n_u=1).
inline dmpc::ModelParams three_mode(unsigned seed = 1) {
  auto m = dmpc::ModelParams::zeros(dmpc::ModelDims{});
  m.A[0] << 0.8, 0.1, 0.0, 0.7;
  m.A[1] << 0.7, 0.0, 0.1, 0.8;
  m.A[2] << 0.75, -0.05, 0.05, 0.75;
  m.B[0] << 0.2, 0.1;
  m.B[1] << 0.25, 0.05;
  m.B[2] << 0.15, 0.12;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> w(-0.5, 0.5);
  m.W1 = Eigen::MatrixXd::NullaryExpr(3, 3, [&] { return w(rng); });
  m.b1 = Eigen::VectorXd::NullaryExpr(3, [&] { return w(rng); });
  m.W2 = Eigen::MatrixXd::NullaryExpr(3, 3, [&] { return w(rng); });
  m.b2 = Eigen::VectorXd::NullaryExpr(3, [&] { return w(rng); });
  return m;
}

/// Y = [-0.8, 0.8], U = [-1, 1].
inline dmpc::ControlSets benchmark_sets(double beta, int nx = 2) {
  return dmpc::ControlSets::boxes(nx, Eigen::VectorXd::Constant(1, -0.8), Eigen::VectorXd::Constant(1, 0.8),
                                  Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0), beta);
}

}  // namespace testmodels
