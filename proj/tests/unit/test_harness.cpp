#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "../common/models.hpp"
#include "dmpc/harness.hpp"

using namespace dmpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

harness::RunConfig loop_config(int steps, harness::Mode mode, double beta, double y_ref) {
  auto cfg = harness::RunConfig::paper_example();
  cfg.steps = steps;
  cfg.mode = mode;
  cfg.beta = beta;
  cfg.model_in_loop = true;
  cfg.reference.lo = cfg.reference.hi = y_ref;
  cfg.reference.dwell = steps > 0 ? steps : 1;
  return cfg;
}

fs::path write_ini(const std::string& name, const std::string& body) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("reference generation") {
  harness::ReferenceSpec spec;
  SUBCASE("a single level held for the whole run") {
    spec.lo = spec.hi = 0.8;
    spec.dwell = 300;
    const auto r = harness::generate_reference(spec, 300, 5);
    CHECK(r.rows() == 300);
    CHECK((r.array() == 0.8).all());
  }
  SUBCASE("seeded sequences repeat") {
    CHECK(harness::generate_reference(spec, 1200, 9) == harness::generate_reference(spec, 1200, 9));
    CHECK(harness::generate_reference(spec, 1200, 9) != harness::generate_reference(spec, 1200, 10));
  }
  SUBCASE("5000 steps with dwell 500 give ten segments") {
    const auto r = harness::generate_reference(spec, 5000, 1);
    int segments = 1;
    for (int t = 1; t < r.rows(); ++t) segments += r(t, 0) != r(t - 1, 0) ? 1 : 0;
    CHECK(segments == 10);
    CHECK(r.maxCoeff() <= 0.8);
    CHECK(r.minCoeff() >= -0.8);
  }
  SUBCASE("random dwell stays within its range") {
    spec.random_dwell = true;
    const auto r = harness::generate_reference(spec, 4000, 2);
    int len = 1;
    for (int t = 1; t < r.rows(); ++t) {
      if (r(t, 0) != r(t - 1, 0)) {
        CHECK(len >= 250);
        CHECK(len <= 750);
        len = 1;
      } else {
        ++len;
      }
    }
  }
  CHECK_THROWS_AS(harness::generate_reference(spec, -1, 1), ConfigError);
}

TEST_CASE("metrics") {
  const auto Y = testmodels::benchmark_sets(0.0).Y;
  harness::RunLog log;
  for (int t = 0; t < 10; ++t) {
    harness::LogRow r;
    r.t = t;
    r.y = r.y_ref = 0.3;
    r.tmpc_status = "optimal";
    log.rows.push_back(r);
  }
  auto s = harness::metrics(log, Y);
  CHECK(s.steps == 10);
  CHECK(s.tracking == 0.0);
  CHECK(s.violation == 0.0);

  for (auto& r : log.rows) {
    r.y = 1.0;
    r.y_ref = 0.0;
  }
  s = harness::metrics(log, Y);
  CHECK(s.violation == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(s.tracking == doctest::Approx(10.0));
}

TEST_CASE("closed loop on the model itself") {
  const auto m = testmodels::three_mode();

  SUBCASE("zero duration") {
    const auto res = harness::run_closed_loop(loop_config(0, harness::Mode::NoAdapt, 0.0, 0.5), m);
    CHECK(res.log.size() == 0);
    CHECK(res.status == harness::RunStatus::Completed);
  }

  SUBCASE("frozen model, no exploration: the Lyapunov value settles") {
    const auto res = harness::run_closed_loop(loop_config(150, harness::Mode::NoAdapt, 0.0, 0.5), m);
    REQUIRE(res.log.size() == 150);
    CHECK(res.log.rows.front().lyapunov > 1e-2);
    for (std::size_t t = 1; t < res.log.rows.size(); ++t)
      CHECK(res.log.rows[t].lyapunov <= res.log.rows[t - 1].lyapunov + 1e-6);
    CHECK(res.log.rows.back().lyapunov < 1e-4);
    const auto cfg = loop_config(1, harness::Mode::NoAdapt, 0.0, 0.5);
    const auto rci = rci::solve_optimal_rci(m, VectorXd::Constant(1, 0.5), cfg.controller(m).rci_weights, cfg.sets());
    double radius = 0.0;
    for (int j = 0; j < cfg.sets().tmpl.num_vertices(); ++j)
      radius = std::max(radius, std::abs((m.C * cfg.sets().tmpl.V(j) * rci.s)[0]));
    CHECK(std::abs(res.log.rows.back().y - (m.C * rci.z_s)[0]) <= radius + 1e-9);
    CHECK(std::abs(res.log.rows.back().y - 0.5) < 0.1);
    for (const auto& r : res.log.rows) CHECK(r.dtheta == 0.0);
  }

  SUBCASE("full adaptation with exploration stays feasible and reproducible") {
    const auto cfg = loop_config(60, harness::Mode::Full, 0.3, -0.4);
    const auto a = harness::run_closed_loop(cfg, m);
    const auto b = harness::run_closed_loop(cfg, m);
    REQUIRE(a.status == harness::RunStatus::Completed);
    REQUIRE(a.log.size() == 60);
    for (std::size_t t = 0; t < a.log.rows.size(); ++t) {
      const auto& r = a.log.rows[t];
      CHECK(std::abs(r.u) <= 1.0);
      CHECK(r.membership <= 1e-7);
      CHECK(r.tube_violation <= 1e-7);
      CHECK(r.u == b.log.rows[t].u);
      CHECK(r.y_hat == b.log.rows[t].y_hat);
    }
  }
}

TEST_CASE("modes and exit codes") {
  CHECK(harness::parse_mode("full_adapt") == harness::Mode::Full);
  CHECK(harness::parse_mode("state_only") == harness::Mode::StateOnly);
  CHECK(harness::to_string(harness::Mode::NoAdapt) == "no_adapt");
  CHECK_THROWS_AS(harness::parse_mode("adaptive"), ConfigError);
  CHECK(harness::exit_code(harness::RunStatus::Completed) == 0);
  CHECK(harness::exit_code(harness::RunStatus::InitialInfeasible) == 2);
  CHECK(harness::exit_code(harness::RunStatus::MidRunInfeasible) == 3);
}

TEST_CASE("configuration file") {
  SUBCASE("overrides and defaults") {
    const auto p = write_ini("dmpc_cfg_ok.ini",
                             "[controller]\nbeta = 0.1\ninitial_row = slack\n[run]\nsteps = 42\nmode = state_only\n");
    const auto c = harness::RunConfig::load(p.string());
    CHECK(c.beta == 0.1);
    CHECK(c.steps == 42);
    CHECK(c.mode == harness::Mode::StateOnly);
    CHECK(c.initial_row == tmpc::InitialRow::Slack);
    CHECK(c.gamma == 0.95);
    CHECK(harness::to_json(c)["controller"]["beta"] == 0.1);
    fs::remove(p);
  }
  SUBCASE("unknown keys and sections are rejected") {
    const auto p = write_ini("dmpc_cfg_key.ini", "[controller]\nbetta = 0.1\n");
    CHECK_THROWS_AS(harness::RunConfig::load(p.string()), ConfigError);
    const auto q = write_ini("dmpc_cfg_sec.ini", "[solver]\ntol = 1\n");
    CHECK_THROWS_AS(harness::RunConfig::load(q.string()), ConfigError);
    fs::remove(p);
    fs::remove(q);
  }
  SUBCASE("invalid values") {
    const auto p = write_ini("dmpc_cfg_bad.ini", "[controller]\ngamma = 1.5\n");
    CHECK_THROWS_AS(harness::RunConfig::load(p.string()), ConfigError);
    const auto q = write_ini("dmpc_cfg_nan.ini", "[run]\nsteps = many\n");
    CHECK_THROWS_AS(harness::RunConfig::load(q.string()), ConfigError);
    fs::remove(p);
    fs::remove(q);
  }
  SUBCASE("the shipped preset spells out the defaults") {
    const auto c = harness::RunConfig::load(DMPC_SOURCE_DIR "/configs/paper_example.ini");
    CHECK(harness::to_json(c) == harness::to_json(harness::RunConfig::paper_example()));
  }
  CHECK_THROWS_AS(harness::RunConfig::load("/nonexistent/dmpc.ini"), ConfigError);
}

TEST_CASE("run log CSV") {
  harness::RunLog log;
  harness::LogRow r;
  r.tmpc_status = "optimal";
  log.rows.push_back(r);
  r.t = 1;
  log.rows.push_back(r);
  const auto p = fs::temp_directory_path() / "dmpc_log.csv";
  log.write_csv(p.string());
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("t,y_ref,y,y_hat,u", 0) == 0);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
  fs::remove(p);
}
