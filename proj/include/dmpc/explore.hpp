#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <vector>

#include "dmpc/tmpc.hpp"

namespace dmpc::explore {

struct PerturbationSet {
  std::vector<Eigen::MatrixXd> samples;  // each N_p x n_u; samples[0] is zero
  std::uint64_t seed = 0;
};

/// Uniform entries in [-beta eps_u, beta eps_u]; the first trajectory is all zeros.
PerturbationSet sample_perturbations(double beta, const Eigen::VectorXd& eps_u, int N_p, int M_p, std::uint64_t seed);

/// The most recent applied inputs, oldest first.
class InputHistory {
 public:
  InputHistory(int capacity, int nu);
  void push(const Eigen::VectorXd& u);
  int size() const { return static_cast<int>(buf_.size()); }
  int capacity() const { return capacity_; }
  int nu() const { return nu_; }
  const Eigen::VectorXd& operator[](int i) const { return buf_[static_cast<std::size_t>(i)]; }

 private:
  int capacity_;
  int nu_;
  std::deque<Eigen::VectorXd> buf_;
};

/**
 * Minimum eigenvalue of the sum of u_{j:j+N} u_{j:j+N}' over the windows starting at
 * j = t-T, ..., t that fit inside history ++ candidate, where t is the first candidate index.
 */
double pe_score(const InputHistory& history, const Eigen::MatrixXd& candidate, int N, int T);

struct Selection {
  Eigen::VectorXd u;    // u_c + u_p
  Eigen::VectorXd u_c;
  Eigen::VectorXd u_p;
  int index = 0;        // winning candidate
  double score = 0.0;
  int rejected = 0;
  int candidates = 0;
  bool relaxed = false;  // a barycentric solve fell back during the winning rollout
};

struct Rollout {
  bool admissible = true;
  Eigen::MatrixXd inputs;   // N_p x n_u, u_c + u_p
  Eigen::MatrixXd nominal;  // N_p x n_u, u_c
  Eigen::MatrixXd states;   // (N_p + 1) x n_x
  bool relaxed = false;
};

/// Tube center and input at step k, continued by z_{k+1} = gamma z_k + (1 - gamma) z_s past N.
Eigen::VectorXd extended_center(const tmpc::TubeSolution& tube, double gamma, int k);
Eigen::VectorXd extended_input(const tmpc::TubeSolution& tube, double gamma, int k);

/// Roll the model from x_hat under u_c + u_p, stopping at the first state outside X(z_{k+1}, s).
Rollout rollout(const Eigen::VectorXd& x_hat, const ModelParams& params, const tmpc::TubeSolution& tube, double gamma,
                const Eigen::MatrixXd& perturbation, const PolytopeTemplate& tmpl, double tol = 1e-7);

Selection select_input(const Eigen::VectorXd& x_hat, const ModelParams& params, const tmpc::TubeSolution& tube,
                       double gamma, const PerturbationSet& perturbations, const InputHistory& history, int T,
                       const PolytopeTemplate& tmpl);

}  // namespace dmpc::explore
