#include "dmpc/explore.hpp"

#include <cmath>
#include <random>

namespace dmpc::explore {

using Eigen::MatrixXd;
using Eigen::VectorXd;

PerturbationSet sample_perturbations(double beta, const VectorXd& eps_u, int N_p, int M_p, std::uint64_t seed) {
  if (beta < 0.0 || beta >= 1.0) throw ConfigError("beta must lie in [0, 1)");
  if (M_p < 1 || N_p < 1) throw ConfigError("need at least one perturbation trajectory of positive length");
  const int nu = static_cast<int>(eps_u.size());
  PerturbationSet out;
  out.seed = seed;
  out.samples.reserve(static_cast<std::size_t>(M_p));
  out.samples.push_back(MatrixXd::Zero(N_p, nu));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int s = 1; s < M_p; ++s) {
    MatrixXd m(N_p, nu);
    for (int k = 0; k < N_p; ++k)
      for (int j = 0; j < nu; ++j) m(k, j) = beta * eps_u[j] * unit(rng);
    out.samples.push_back(m);
  }
  return out;
}

InputHistory::InputHistory(int capacity, int nu) : capacity_(capacity), nu_(nu) {
  if (capacity < 0 || nu < 1) throw ConfigError("invalid input history shape");
}

void InputHistory::push(const VectorXd& u) {
  if (u.size() != nu_) throw ConfigError("input has the wrong dimension");
  if (capacity_ == 0) return;
  buf_.push_back(u);
  while (static_cast<int>(buf_.size()) > capacity_) buf_.pop_front();
}

double pe_score(const InputHistory& history, const MatrixXd& candidate, int N, int T) {
  const int nu = history.nu();
  if (N * nu < 1) throw ConfigError("window must hold at least one input");
  const int h = history.size();
  const int len = h + static_cast<int>(candidate.rows());
  auto at = [&](int i) -> VectorXd { return i < h ? history[i] : VectorXd(candidate.row(i - h).transpose()); };

  MatrixXd acc = MatrixXd::Zero(N * nu, N * nu);
  VectorXd w(N * nu);
  for (int j = std::max(0, h - T); j <= h && j + N <= len; ++j) {
    for (int k = 0; k < N; ++k) w.segment(k * nu, nu) = at(j + k);
    acc.noalias() += w * w.transpose();
  }
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(acc, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

VectorXd extended_center(const tmpc::TubeSolution& tube, double gamma, int k) {
  const int N = tube.horizon();
  if (k <= N) return tube.z.row(k).transpose();
  const VectorXd& zs = tube.rci.z_s;
  return zs + std::pow(gamma, k - N) * (tube.z.row(N).transpose() - zs);
}

VectorXd extended_input(const tmpc::TubeSolution& tube, double gamma, int k) {
  const int N = tube.horizon();
  if (k <= N) return tube.v.row(k).transpose();
  const VectorXd& vs = tube.rci.v_s;
  return vs + std::pow(gamma, k - N) * (tube.v.row(N).transpose() - vs);
}

Rollout rollout(const VectorXd& x_hat, const ModelParams& params, const tmpc::TubeSolution& tube, double gamma,
                const MatrixXd& perturbation, const PolytopeTemplate& tmpl, double tol) {
  const int Np = static_cast<int>(perturbation.rows());
  Rollout out;
  out.inputs = MatrixXd::Zero(Np, params.dims.nu);
  out.nominal = MatrixXd::Zero(Np, params.dims.nu);
  out.states = MatrixXd::Zero(Np + 1, params.dims.nx);
  out.states.row(0) = x_hat.transpose();
  VectorXd x = x_hat;
  for (int k = 0; k < Np; ++k) {
    const ParamSet set{extended_center(tube, gamma, k), tube.rci.s};
    const auto bw = barycentric_lambda(set, x, tmpl);
    out.relaxed = out.relaxed || bw.relaxed;
    VectorXd uc = extended_input(tube, gamma, k);
    for (int j = 0; j < tmpl.num_vertices(); ++j) uc += bw.lambda[j] * (tmpl.U(j) * tube.rci.c);
    const VectorXd u = uc + perturbation.row(k).transpose();
    out.nominal.row(k) = uc.transpose();
    out.inputs.row(k) = u.transpose();
    x = step(params, x, u);
    out.states.row(k + 1) = x.transpose();
    const ParamSet next{extended_center(tube, gamma, k + 1), tube.rci.s};
    if (!tmpl.contains(next, x, tol)) {
      out.admissible = false;
      return out;
    }
  }
  return out;
}

Selection select_input(const VectorXd& x_hat, const ModelParams& params, const tmpc::TubeSolution& tube, double gamma,
                       const PerturbationSet& perturbations, const InputHistory& history, int T,
                       const PolytopeTemplate& tmpl) {
  if (perturbations.samples.empty()) throw ConfigError("empty perturbation set");
  const int N = tube.horizon();
  Selection best;
  best.candidates = static_cast<int>(perturbations.samples.size());
  bool found = false;
  for (int i = 0; i < best.candidates; ++i) {
    const auto ro = rollout(x_hat, params, tube, gamma, perturbations.samples[static_cast<std::size_t>(i)], tmpl);
    if (!ro.admissible) {
      ++best.rejected;
      continue;
    }
    const double score = pe_score(history, ro.inputs, N, T);
    if (!found || score > best.score) {
      found = true;
      best.index = i;
      best.score = score;
      best.u_c = ro.nominal.row(0).transpose();
      best.u_p = perturbations.samples[static_cast<std::size_t>(i)].row(0).transpose();
      best.u = ro.inputs.row(0).transpose();
      best.relaxed = ro.relaxed;
    }
  }
  if (!found) {
    // Numerical corner: even the zero perturbation left the tube. Apply the nominal law.
    const auto nom = tmpc::nominal_input(tube, x_hat, tmpl);
    best.index = 0;
    best.u_c = nom.u_c;
    best.u_p = VectorXd::Zero(params.dims.nu);
    best.u = nom.u_c;
    best.relaxed = nom.relaxed;
    best.score = pe_score(history, MatrixXd::Zero(N, params.dims.nu), N, T);
  }
  return best;
}

}  // namespace dmpc::explore
