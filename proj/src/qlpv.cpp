#include "dmpc/qlpv.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace dmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

VectorXd stack(const VectorXd& x, const VectorXd& u) {
  VectorXd z(x.size() + u.size());
  z << x, u;
  return z;
}

void check_dims(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  if (x.size() != params.dims.nx || u.size() != params.dims.nu)
    throw ConfigError("state/input size does not match the model");
}

// Columns A_i x + B_i u.
MatrixXd local_predictions(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  MatrixXd G(params.dims.nx, params.dims.np);
  for (int i = 0; i < params.dims.np; ++i) G.col(i) = params.A[i] * x + params.B[i] * u;
  return G;
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

double swish(double a) { return a * sigmoid(a); }

double swish_derivative(double a) {
  const double s = sigmoid(a);
  return s + a * s * (1.0 - s);
}

VectorXd softmax(const VectorXd& o) {
  const VectorXd e = (o.array() - o.maxCoeff()).exp();
  return e / e.sum();
}

MatrixXd selection_output(int ny, int nx) { return MatrixXd::Identity(ny, nx); }

ModelParams ModelParams::zeros(const ModelDims& d) {
  ModelParams m;
  m.dims = d;
  m.A.assign(d.np, MatrixXd::Zero(d.nx, d.nx));
  m.B.assign(d.np, MatrixXd::Zero(d.nx, d.nu));
  m.W1 = MatrixXd::Zero(d.nh, d.nx + d.nu);
  m.b1 = VectorXd::Zero(d.nh);
  m.W2 = MatrixXd::Zero(d.np, d.nh);
  m.b2 = VectorXd::Zero(d.np);
  m.C = selection_output(d.ny, d.nx);
  return m;
}

ModelParams ModelParams::unpack(const ModelDims& d, const VectorXd& theta, const MatrixXd& C) {
  if (theta.size() != d.n_theta())
    throw ConfigError("theta has length " + std::to_string(theta.size()) + ", expected " +
                      std::to_string(d.n_theta()));
  ModelParams m = zeros(d);
  int k = 0;
  auto read = [&](MatrixXd& M) {
    for (int r = 0; r < M.rows(); ++r)
      for (int c = 0; c < M.cols(); ++c) M(r, c) = theta[k++];
  };
  for (auto& A : m.A) read(A);
  for (auto& B : m.B) read(B);
  read(m.W1);
  for (int r = 0; r < d.nh; ++r) m.b1[r] = theta[k++];
  read(m.W2);
  for (int r = 0; r < d.np; ++r) m.b2[r] = theta[k++];
  m.C = C;
  m.dims.ny = static_cast<int>(C.rows());
  m.validate();
  return m;
}

VectorXd ModelParams::pack() const {
  VectorXd theta(dims.n_theta());
  int k = 0;
  auto write = [&](const MatrixXd& M) {
    for (int r = 0; r < M.rows(); ++r)
      for (int c = 0; c < M.cols(); ++c) theta[k++] = M(r, c);
  };
  for (const auto& Ai : A) write(Ai);
  for (const auto& Bi : B) write(Bi);
  write(W1);
  for (int r = 0; r < b1.size(); ++r) theta[k++] = b1[r];
  write(W2);
  for (int r = 0; r < b2.size(); ++r) theta[k++] = b2[r];
  return theta;
}

void ModelParams::validate() const {
  const auto& d = dims;
  if (d.nx < 1 || d.nu < 1 || d.np < 1 || d.nh < 1 || d.ny < 1) throw ConfigError("model dimensions must be positive");
  if (static_cast<int>(A.size()) != d.np || static_cast<int>(B.size()) != d.np)
    throw ConfigError("model needs n_p matrices A_i and B_i");
  for (int i = 0; i < d.np; ++i) {
    if (A[i].rows() != d.nx || A[i].cols() != d.nx) throw ConfigError("A_i must be n_x x n_x");
    if (B[i].rows() != d.nx || B[i].cols() != d.nu) throw ConfigError("B_i must be n_x x n_u");
  }
  if (W1.rows() != d.nh || W1.cols() != d.nx + d.nu || b1.size() != d.nh || W2.rows() != d.np ||
      W2.cols() != d.nh || b2.size() != d.np)
    throw ConfigError("scheduling network weights have inconsistent sizes");
  if (C.rows() != d.ny || C.cols() != d.nx) throw ConfigError("C must be n_y x n_x");
  Eigen::FullPivLU<MatrixXd> lu(C);
  if (lu.rank() != C.rows()) throw ConfigError("C must have full row rank");
}

VectorXd network_output(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  const VectorXd a = params.W1 * stack(x, u) + params.b1;
  return params.W2 * a.unaryExpr([](double v) { return swish(v); }) + params.b2;
}

VectorXd scheduling(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  check_dims(params, x, u);
  return softmax(network_output(params, x, u));
}

VectorXd step(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  check_dims(params, x, u);
  return local_predictions(params, x, u) * scheduling(params, x, u);
}

StepJacobian step_jacobian(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  check_dims(params, x, u);
  const auto& d = params.dims;
  const VectorXd z = stack(x, u);
  const VectorXd a = params.W1 * z + params.b1;
  const VectorXd h = a.unaryExpr([](double v) { return swish(v); });
  const VectorXd p = softmax(params.W2 * h + params.b2);
  const MatrixXd G = local_predictions(params, x, u);

  const MatrixXd Jsm = MatrixXd(p.asDiagonal()) - p * p.transpose();
  const MatrixXd df_do = G * Jsm;                    // n_x x n_p
  const MatrixXd df_dh = df_do * params.W2;          // n_x x n_h
  const MatrixXd df_da = df_dh * a.unaryExpr([](double v) { return swish_derivative(v); }).asDiagonal();

  StepJacobian J;
  J.wrt_x = df_da * params.W1.leftCols(d.nx);
  for (int i = 0; i < d.np; ++i) J.wrt_x += p[i] * params.A[i];

  J.wrt_theta = MatrixXd::Zero(d.nx, d.n_theta());
  for (int i = 0; i < d.np; ++i) {
    for (int r = 0; r < d.nx; ++r) {
      for (int c = 0; c < d.nx; ++c) J.wrt_theta(r, d.offset_A(i) + r * d.nx + c) = p[i] * x[c];
      for (int c = 0; c < d.nu; ++c) J.wrt_theta(r, d.offset_B(i) + r * d.nu + c) = p[i] * u[c];
    }
  }
  const int nz = d.nx + d.nu;
  for (int k = 0; k < d.nh; ++k) {
    for (int c = 0; c < nz; ++c) J.wrt_theta.col(d.offset_W1() + k * nz + c) = df_da.col(k) * z[c];
    J.wrt_theta.col(d.offset_b1() + k) = df_da.col(k);
  }
  for (int i = 0; i < d.np; ++i) {
    for (int k = 0; k < d.nh; ++k) J.wrt_theta.col(d.offset_W2() + i * d.nh + k) = df_do.col(i) * h[k];
    J.wrt_theta.col(d.offset_b2() + i) = df_do.col(i);
  }
  return J;
}

MatrixXd augmented_jacobian(const ModelParams& params, const VectorXd& x, const VectorXd& u) {
  const int nx = params.dims.nx;
  const int nt = params.dims.n_theta();
  const auto J = step_jacobian(params, x, u);
  MatrixXd out = MatrixXd::Zero(nx + nt, nx + nt);
  out.topLeftCorner(nx, nx) = J.wrt_x;
  out.topRightCorner(nx, nt) = J.wrt_theta;
  out.bottomRightCorner(nt, nt).setIdentity();
  return out;
}

VectorXd disturbance_vector(const ModelParams& params, const PolytopeTemplate& tmpl, double beta, const VectorXd& eps_u) {
  if (beta < 0.0 || beta >= 1.0) throw ConfigError("beta must lie in [0, 1)");
  if (eps_u.size() != params.dims.nu || eps_u.minCoeff() < 0.0) throw ConfigError("eps_u must be a nonnegative n_u vector");
  VectorXd d = VectorXd::Zero(tmpl.num_facets());
  for (const auto& Bi : params.B) d = d.cwiseMax(beta * (tmpl.F() * Bi).cwiseAbs() * eps_u);
  return d;
}

std::string to_json(const ModelParams& params) {
  const VectorXd theta = params.pack();
  json j;
  j["n_x"] = params.dims.nx;
  j["n_u"] = params.dims.nu;
  j["n_p"] = params.dims.np;
  j["n_h"] = params.dims.nh;
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  json C = json::array();
  for (int r = 0; r < params.C.rows(); ++r) {
    std::vector<double> row(params.C.cols());
    for (int c = 0; c < params.C.cols(); ++c) row[c] = params.C(r, c);
    C.push_back(row);
  }
  j["C"] = C;
  return j.dump(2);
}

ModelParams model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    ModelDims d;
    d.nx = j.at("n_x").get<int>();
    d.nu = j.at("n_u").get<int>();
    d.np = j.at("n_p").get<int>();
    d.nh = j.at("n_h").get<int>();
    const auto theta_v = j.at("theta").get<std::vector<double>>();
    const auto rows = j.at("C").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw ConfigError("model JSON has an empty C");
    MatrixXd C(rows.size(), d.nx);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != d.nx) throw ConfigError("C rows must have n_x entries");
      for (int c = 0; c < d.nx; ++c) C(r, c) = rows[r][c];
    }
    d.ny = static_cast<int>(C.rows());
    return ModelParams::unpack(d, Eigen::Map<const VectorXd>(theta_v.data(), theta_v.size()), C);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model JSON: ") + e.what());
  }
}

void save_model(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(params) << '\n';
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace dmpc
