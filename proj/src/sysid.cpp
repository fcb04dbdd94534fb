#include "dmpc/sysid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace dmpc::sysid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double objective(double mse, double wd, const VectorXd& theta) { return mse + wd * theta.squaredNorm(); }

}  // namespace

void IoDataset::validate() const {
  if (u_seq.rows() != y_seq.rows()) throw ConfigError("dataset input and output lengths differ");
  if (u_seq.rows() == 0) throw ConfigError("dataset is empty");
  if (!u_seq.allFinite() || !y_seq.allFinite()) throw ConfigError("dataset has non-finite entries");
}

IoDataset read_csv(const std::string& path, double scale) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read dataset " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset " + path + " has no header");
  const auto header = split(line);
  std::vector<int> ucols, ycols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (!header[c].empty() && header[c][0] == 'u') ucols.push_back(c);
    if (!header[c].empty() && header[c][0] == 'y') ycols.push_back(c);
  }
  if (ucols.empty() || ycols.empty()) throw ConfigError("dataset header needs u and y columns");

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ConfigError(path + ":" + std::to_string(lineno) + ": wrong column count");
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        row[c] = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number: " + cells[c]);
      }
    }
    rows.push_back(std::move(row));
  }
  IoDataset data;
  data.scale = scale;
  data.u_seq.resize(rows.size(), ucols.size());
  data.y_seq.resize(rows.size(), ycols.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t j = 0; j < ucols.size(); ++j) data.u_seq(t, j) = rows[t][ucols[j]];
    for (std::size_t j = 0; j < ycols.size(); ++j) data.y_seq(t, j) = rows[t][ycols[j]];
  }
  data.validate();
  return data;
}

void write_csv(const IoDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const bool scalar = data.u_seq.cols() == 1 && data.y_seq.cols() == 1;
  out << "t";
  for (int j = 0; j < data.u_seq.cols(); ++j) out << ",u" << (scalar ? "" : std::to_string(j));
  for (int j = 0; j < data.y_seq.cols(); ++j) out << ",y" << (scalar ? "" : std::to_string(j));
  out << '\n' << std::setprecision(17);
  for (int t = 0; t < data.length(); ++t) {
    out << t;
    for (int j = 0; j < data.u_seq.cols(); ++j) out << ',' << data.u_seq(t, j);
    for (int j = 0; j < data.y_seq.cols(); ++j) out << ',' << data.y_seq(t, j);
    out << '\n';
  }
}

IoDataset generate_dataset(const plant::PlantConfig& cfg, const ExcitationConfig& ex, std::uint64_t seed) {
  cfg.validate();
  if (ex.length < 1 || ex.hold < 1 || !(ex.u_max > ex.u_min)) throw ConfigError("invalid excitation settings");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(ex.u_min, ex.u_max);
  IoDataset data;
  data.scale = cfg.output_scale;
  data.u_seq.resize(ex.length, 1);
  data.y_seq.resize(ex.length, 1);
  plant::State x = plant::State::Zero();
  double u = 0.0;
  for (int t = 0; t < ex.length; ++t) {
    if (t % ex.hold == 0) u = dist(rng);
    data.u_seq(t, 0) = u;
    data.y_seq(t, 0) = plant::output(cfg, x);
    x = plant::rk4_step(cfg, x, u);
  }
  return data;
}

MatrixXd simulate(const ModelParams& params, const IoDataset& data, const VectorXd& x0) {
  MatrixXd yhat(data.length(), params.dims.ny);
  VectorXd x = x0;
  for (int t = 0; t < data.length(); ++t) {
    yhat.row(t) = (params.C * x).transpose();
    if (t + 1 < data.length()) x = step(params, x, data.u_seq.row(t).transpose());
  }
  return yhat;
}

double simulate_mse(const ModelParams& params, const IoDataset& data, const VectorXd& x0) {
  data.validate();
  const MatrixXd yhat = simulate(params, data, x0);
  if (!yhat.allFinite()) return std::numeric_limits<double>::infinity();
  const double mse = (data.y_seq - yhat).squaredNorm() / data.length();
  return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

LossGradient mse_gradient(const ModelParams& params, const IoDataset& data, const VectorXd& x0) {
  data.validate();
  const int T = data.length();
  const int nx = params.dims.nx;
  std::vector<VectorXd> xs(T);
  xs[0] = x0;
  for (int t = 0; t + 1 < T; ++t) xs[t + 1] = step(params, xs[t], data.u_seq.row(t).transpose());

  LossGradient out;
  out.gradient = VectorXd::Zero(params.dims.n_theta());
  out.mse = 0.0;
  for (int t = 0; t < T; ++t) out.mse += (data.y_seq.row(t).transpose() - params.C * xs[t]).squaredNorm();
  out.mse /= T;
  if (!std::isfinite(out.mse)) {
    out.mse = std::numeric_limits<double>::infinity();
    return out;
  }

  // adj = d mse / d x_{t+1} accumulated backwards
  VectorXd adj = VectorXd::Zero(nx);
  for (int t = T - 1; t >= 0; --t) {
    VectorXd gx = -2.0 / T * params.C.transpose() * (data.y_seq.row(t).transpose() - params.C * xs[t]);
    if (t + 1 < T) {
      const auto J = step_jacobian(params, xs[t], data.u_seq.row(t).transpose());
      out.gradient += J.wrt_theta.transpose() * adj;
      gx += J.wrt_x.transpose() * adj;
    }
    adj = gx;
  }
  return out;
}

ModelParams initial_guess(const ModelDims& dims, const TrainConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a(-cfg.a_noise, cfg.a_noise), w(-cfg.weight_noise, cfg.weight_noise);
  auto m = ModelParams::zeros(dims);
  for (auto& Ai : m.A) Ai = 0.5 * MatrixXd::Identity(dims.nx, dims.nx) + MatrixXd::NullaryExpr(dims.nx, dims.nx, [&] { return a(rng); });
  for (auto& Bi : m.B) Bi = MatrixXd::NullaryExpr(dims.nx, dims.nu, [&] { return w(rng); });
  m.W1 = MatrixXd::NullaryExpr(dims.nh, dims.nx + dims.nu, [&] { return w(rng); });
  m.b1 = VectorXd::NullaryExpr(dims.nh, [&] { return w(rng); });
  m.W2 = MatrixXd::NullaryExpr(dims.np, dims.nh, [&] { return w(rng); });
  m.b2 = VectorXd::NullaryExpr(dims.np, [&] { return w(rng); });
  return m;
}

FitResult fit_initial_model(const IoDataset& data, const TrainConfig& cfg, std::uint64_t seed) {
  data.validate();
  if (data.length() < 2) throw ConfigError("training needs at least two samples");
  ModelDims dims = cfg.dims;
  dims.ny = static_cast<int>(data.y_seq.cols());
  if (data.u_seq.cols() != dims.nu) throw ConfigError("dataset input width does not match n_u");

  const VectorXd x0 = VectorXd::Zero(dims.nx);
  ModelParams model = initial_guess(dims, cfg, seed);
  const MatrixXd C = model.C;
  VectorXd theta = model.pack();

  auto evaluate = [&](const VectorXd& th, VectorXd* grad) {
    const auto m = ModelParams::unpack(dims, th, C);
    if (grad) {
      auto lg = mse_gradient(m, data, x0);
      *grad = lg.gradient + 2.0 * cfg.weight_decay * th;
      return std::pair{lg.mse, objective(lg.mse, cfg.weight_decay, th)};
    }
    const double mse = simulate_mse(m, data, x0);
    return std::pair{mse, objective(mse, cfg.weight_decay, th)};
  };

  FitResult result;
  VectorXd grad;
  auto [mse, obj] = evaluate(theta, &grad);
  if (!std::isfinite(obj)) throw DivergenceError("initial model rollout diverged");
  double step_size = cfg.initial_step;

  int epoch = 0;
  for (; epoch < cfg.max_epochs; ++epoch) {
    const double g2 = grad.squaredNorm();
    if (g2 == 0.0) break;
    bool accepted = false;
    double t = step_size;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const VectorXd cand = theta - t * grad;
      const auto [cm, co] = evaluate(cand, nullptr);
      if (std::isfinite(co) && co <= obj - cfg.armijo_c * t * g2) {
        theta = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    step_size = 2.0 * t;
    std::tie(mse, obj) = evaluate(theta, &grad);
    result.loss_history.push_back(obj);
    const std::size_t n = result.loss_history.size();
    if (n > 500 && result.loss_history[n - 501] - obj < cfg.stall_tol * std::abs(obj)) break;
  }

  result.params = ModelParams::unpack(dims, theta, C);
  result.train_mse = mse;
  result.epochs = epoch;
  result.reached_target = mse <= cfg.target;
  return result;
}

GateReport feasibility_gate(const ModelParams& params, const tmpc::ControllerConfig& cfg, const ControlSets& sets,
                            const VectorXd& x0, const VectorXd& y_ref) {
  params.validate();
  GateReport rep;
  const auto tq = tmpc::build_tmpc_qp(x0, params, y_ref, cfg, sets);
  const auto sol = tmpc::solve_tmpc(x0, params, y_ref, cfg, sets);
  rep.status = sol.status;
  rep.feasible = sol.optimal();
  rep.max_violation = qp::max_violation(tq.problem, sol.x);
  rep.cost = sol.cost;
  if (rep.feasible) rep.rci_verify_worst = rci::verify_rci(sol.rci, params, sets, 1000).worst();
  return rep;
}

IdentifyResult identify(const IoDataset& data, TrainConfig train, const ControlSets& sets, int N, double gamma,
                        std::uint64_t seed, int max_retries) {
  IdentifyResult out;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    if (attempt > 0) train.weight_decay = std::max(train.weight_decay, 1e-3);
    out.seed = seed + static_cast<std::uint64_t>(attempt);
    out.weight_decay = train.weight_decay;
    out.attempts = attempt + 1;
    out.fit = fit_initial_model(data, train, out.seed);
    const auto cfg = tmpc::ControllerConfig::defaults(out.fit.params, sets.tmpl, N, gamma);
    out.gate = feasibility_gate(out.fit.params, cfg, sets, VectorXd::Zero(train.dims.nx),
                                VectorXd::Zero(out.fit.params.dims.ny));
    if (out.gate.feasible) break;
  }
  return out;
}

}  // namespace dmpc::sysid
