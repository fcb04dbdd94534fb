#include <doctest.h>

#include <random>

#include "../common/models.hpp"
#include "dmpc/estimator.hpp"

using namespace dmpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

MatrixXd random_psd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const MatrixXd R = MatrixXd::NullaryExpr(n, n, [&] { return g(rng); });
  return R * R.transpose() / n;
}

ModelParams linear_model() {
  auto m = ModelParams::zeros(ModelDims{2, 1, 1, 2, 1});
  m.A[0] << 0.9, 0.2, -0.1, 0.8;
  m.B[0] << 0.5, 1.0;
  return m;
}

}  // namespace

TEST_CASE("gain examples") {
  CHECK(estimator::gain(MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1))(0, 0) == doctest::Approx(0.5));
  MatrixXd Ct = MatrixXd::Zero(1, 4);
  Ct(0, 0) = 1.0;
  CHECK(estimator::gain(MatrixXd::Zero(4, 4), Ct, MatrixXd::Ones(1, 1)).norm() == 0.0);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd P = random_psd(6, rng);
    MatrixXd C = MatrixXd::Zero(1, 6);
    C(0, trial % 6) = 1.0;
    const MatrixXd K = estimator::gain(P, C, 0.1 * MatrixXd::Identity(1, 1));
    MatrixXd Pu = (MatrixXd::Identity(6, 6) - K * C) * P;
    Pu = 0.5 * (Pu + Pu.transpose());
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(Pu).eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("prediction") {
  const auto m = testmodels::three_mode();
  estimator::EstimatorConfig cfg;
  auto st = estimator::EstimatorState::init(m, Eigen::Vector2d(0.3, -0.2), cfg);
  CHECK(st.zeta.size() == 44);
  std::mt19937_64 rng(2);
  st.P = random_psd(44, rng);
  const VectorXd u = VectorXd::Constant(1, 0.4);
  const auto pr = estimator::predict(st, m, u);
  CHECK((pr.zeta.tail(42) - st.zeta.tail(42)).norm() == 0.0);
  CHECK((pr.zeta.head(2) - step(m, st.x(), u)).norm() < 1e-15);

  const MatrixXld J = augmented_jacobian(m, st.x(), u).cast<long double>();
  const MatrixXld Pl = J * st.P.cast<long double>() * J.transpose() + st.Qe.cast<long double>();
  CHECK((pr.P - Pl.cast<double>()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((pr.P - pr.P.transpose()).norm() == 0.0);
}

TEST_CASE("unconstrained filter matches a textbook Kalman filter") {
  const auto m = linear_model();
  estimator::EstimatorConfig cfg;
  cfg.freeze_theta = true;
  cfg.qe_x = 1e-3;
  auto st = estimator::EstimatorState::init(m, VectorXd::Zero(2), cfg);

  MatrixXd P = MatrixXd::Identity(2, 2);
  VectorXd x = VectorXd::Zero(2);
  const MatrixXd Q = 1e-3 * MatrixXd::Identity(2, 2);
  const double R = 0.1;
  VectorXd truth = Eigen::Vector2d(1.0, -0.5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int t = 0; t < 100; ++t) {
    const VectorXd u = VectorXd::Constant(1, std::sin(0.1 * t));
    truth = m.A[0] * truth + m.B[0] * u;
    const VectorXd y = m.C * truth + VectorXd::Constant(1, g(rng));

    x = m.A[0] * x + m.B[0] * u;
    P = m.A[0] * P * m.A[0].transpose() + Q;
    const double S = (m.C * P * m.C.transpose())(0, 0) + R;
    const VectorXd K = P * m.C.transpose() / S;
    x += K * (y - m.C * x);
    P = (MatrixXd::Identity(2, 2) - K * m.C) * P;

    st = estimator::correct(st, estimator::predict(st, m, u), m, y);
    CHECK((st.x() - x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((st.theta() - m.pack()).norm() == 0.0);
  }
}

TEST_CASE("feasibility polytope") {
  const auto m = testmodels::three_mode();

  SUBCASE("row counts") {
    const auto sets = testmodels::benchmark_sets(0.3);
    const auto rows = estimator::theta_polytope_rows(m.dims, sets.tmpl, 2);
    CHECK(rows.state == 4);
    CHECK(rows.disturbance == 24);
    CHECK(rows.tube == 12);
    CHECK(rows.shifted == 24);
    CHECK(rows.rci == 48);
    CHECK(rows.total() == 112);
  }

  SUBCASE("the model step under the current parameters is a member") {
    for (double beta : {0.0, 0.3}) {
      const auto sets = testmodels::benchmark_sets(beta);
      const auto cfg = tmpc::ControllerConfig::defaults(m, sets.tmpl);
      std::mt19937_64 rng(4);
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      for (int trial = 0; trial < 20; ++trial) {
        const VectorXd x = 0.25 * VectorXd::NullaryExpr(2, [&] { return unit(rng); });
        const auto sol = tmpc::solve_tmpc(x, m, VectorXd::Constant(1, 0.5 * unit(rng)), cfg, sets);
        REQUIRE(sol.optimal());
        const VectorXd u = tmpc::nominal_input(sol, x, sets.tmpl).u_c + VectorXd::Constant(1, beta * unit(rng));
        const VectorXd d = disturbance_vector(m, sets.tmpl, beta, sets.eps_u);
        const auto poly = estimator::build_theta_polytope(sol, m, sets, cfg.gamma, d);
        CHECK(poly.A_zeta.rows() == 112);
        VectorXd zeta(44);
        zeta << step(m, x, u), m.pack();
        CHECK(poly.violation(zeta) <= 1e-9);
      }
    }
  }

  SUBCASE("beta = 0 leaves the disturbance rows empty") {
    const auto sets = testmodels::benchmark_sets(0.0);
    const auto cfg = tmpc::ControllerConfig::defaults(m, sets.tmpl);
    const auto sol = tmpc::solve_tmpc(VectorXd::Zero(2), m, VectorXd::Zero(1), cfg, sets);
    const auto poly = estimator::build_theta_polytope(sol, m, sets, cfg.gamma, VectorXd::Zero(4));
    CHECK(poly.A_zeta.middleRows(4, 24).norm() == 0.0);
    CHECK(poly.b.segment(4, 24).norm() == 0.0);
  }

  SUBCASE("net weights are unconstrained") {
    const auto sets = testmodels::benchmark_sets(0.3);
    const auto cfg = tmpc::ControllerConfig::defaults(m, sets.tmpl);
    const auto sol = tmpc::solve_tmpc(VectorXd::Zero(2), m, VectorXd::Zero(1), cfg, sets);
    const auto poly = estimator::build_theta_polytope(sol, m, sets, cfg.gamma, disturbance_vector(m, sets.tmpl, 0.3, sets.eps_u));
    CHECK(poly.A_zeta.rightCols(42 - m.dims.offset_W1()).norm() == 0.0);
  }

  SUBCASE("wrong disturbance size is rejected") {
    const auto sets = testmodels::benchmark_sets(0.3);
    const auto cfg = tmpc::ControllerConfig::defaults(m, sets.tmpl);
    const auto sol = tmpc::solve_tmpc(VectorXd::Zero(2), m, VectorXd::Zero(1), cfg, sets);
    CHECK_THROWS_AS(estimator::build_theta_polytope(sol, m, sets, cfg.gamma, VectorXd::Zero(3)), ConfigError);
  }
}

TEST_CASE("constrained correction") {
  const auto m = linear_model();
  const int nz = 2 + m.dims.n_theta();
  estimator::EstimatorConfig cfg;
  auto st = estimator::EstimatorState::init(m, VectorXd::Zero(2), cfg);
  estimator::Prediction pred{st.zeta, st.P};
  pred.zeta.head(2) << 1.5, 0.0;

  estimator::FeasibilityPolytope poly;
  poly.A_zeta = MatrixXd::Zero(1, nz);
  poly.rows.state = 1;

  SUBCASE("halfspace projection with zero innovation") {
    poly.A_zeta(0, 0) = 1.0;
    poly.b = VectorXd::Ones(1);
    const auto res = estimator::constrained_correct(st, pred, m, m.C * pred.zeta.head(2), poly, cfg);
    CHECK((res.unconstrained - pred.zeta).norm() < 1e-15);
    CHECK(res.state.zeta[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(res.projection_loss > 0.0);
    CHECK(!res.fallback);
    CHECK(res.membership <= 1e-9);
    // Projection leaves the covariance alone.
    CHECK((res.state.P - estimator::correct(st, pred, m, m.C * pred.zeta.head(2)).P).norm() == 0.0);
  }
  SUBCASE("interior update is the plain EKF") {
    poly.A_zeta(0, 0) = 1.0;
    poly.b = VectorXd::Constant(1, 10.0);
    const VectorXd y = VectorXd::Constant(1, 1.2);
    const auto res = estimator::constrained_correct(st, pred, m, y, poly, cfg);
    CHECK(res.projection_loss == 0.0);
    CHECK((res.state.zeta - estimator::correct(st, pred, m, y).zeta).norm() == 0.0);

    auto one = cfg;
    one.correction = estimator::Correction::OneShot;
    const auto res1 = estimator::constrained_correct(st, pred, m, y, poly, one);
    CHECK((res1.state.zeta - res.state.zeta).cwiseAbs().maxCoeff() < 1e-7);
  }
  SUBCASE("one-shot correction respects the polytope") {
    poly.A_zeta(0, 0) = 1.0;
    poly.b = VectorXd::Ones(1);
    auto one = cfg;
    one.correction = estimator::Correction::OneShot;
    const auto res = estimator::constrained_correct(st, pred, m, VectorXd::Constant(1, 2.0), poly, one);
    CHECK(res.state.zeta[0] <= 1.0 + 1e-9);
    CHECK(!res.fallback);
  }
  SUBCASE("empty polytope falls back to the previous parameters") {
    poly.A_zeta = MatrixXd::Zero(2, nz);
    poly.b = VectorXd::Zero(2);
    poly.A_zeta(0, 0) = 1.0;
    poly.b[0] = 1.0;
    // A_1[0,0] - A_1[0,1] <= -100 is unreachable for the projection, which only moves excited coordinates
    poly.A_zeta(1, 2) = 1.0;
    poly.A_zeta(1, 3) = -1.0;
    poly.b[1] = -100.0;
    poly.rows.state = 1;
    const auto res = estimator::constrained_correct(st, pred, m, VectorXd::Constant(1, 3.0), poly, cfg);
    CHECK(res.fallback);
    CHECK((res.state.theta() - pred.zeta.tail(nz - 2)).norm() == 0.0);
    CHECK(res.state.zeta[0] <= 1.0 + 1e-9);
  }
  SUBCASE("frozen parameters never move") {
    auto fz = cfg;
    fz.freeze_theta = true;
    auto s2 = estimator::EstimatorState::init(m, VectorXd::Zero(2), fz);
    estimator::Prediction p2{s2.zeta, s2.P};
    p2.zeta.head(2) << 1.5, 0.0;
    poly.A_zeta(0, 0) = 1.0;
    poly.b = VectorXd::Ones(1);
    const auto res = estimator::constrained_correct(s2, p2, m, VectorXd::Constant(1, 2.0), poly, fz);
    CHECK((res.state.theta() - m.pack()).norm() == 0.0);
    CHECK(res.state.zeta[0] <= 1.0 + 1e-9);
  }
}
