#include "dmpc/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>

namespace dmpc::harness {

using Eigen::MatrixXd;
using Eigen::VectorXd;

#ifndef DMPC_VERSION
#define DMPC_VERSION "unknown"
#endif

Mode parse_mode(const std::string& s) {
  if (s == "no_adapt") return Mode::NoAdapt;
  if (s == "state_only" || s == "state_only_adapt") return Mode::StateOnly;
  if (s == "full" || s == "full_adapt") return Mode::Full;
  throw ConfigError("unknown mode '" + s + "' (expected no_adapt, state_only or full)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::NoAdapt: return "no_adapt";
    case Mode::StateOnly: return "state_only";
    case Mode::Full: return "full";
  }
  return "?";
}

MatrixXd generate_reference(const ReferenceSpec& spec, int duration, std::uint64_t seed, int ny) {
  if (duration < 0) throw ConfigError("duration must be nonnegative");
  if (spec.dwell < 1) throw ConfigError("reference dwell must be positive");
  if (spec.lo > spec.hi) throw ConfigError("reference bounds are inverted");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> level(spec.lo, spec.hi);
  std::uniform_int_distribution<int> dwell(std::max(1, spec.dwell / 2), std::max(1, 3 * spec.dwell / 2));
  MatrixXd ref(duration, ny);
  int t = 0;
  while (t < duration) {
    const int len = spec.random_dwell ? dwell(rng) : spec.dwell;
    VectorXd y(ny);
    for (int k = 0; k < ny; ++k) y[k] = level(rng);
    for (int k = 0; k < len && t < duration; ++k, ++t) ref.row(t) = y.transpose();
  }
  return ref;
}

RunConfig RunConfig::paper_example() { return RunConfig{}; }

namespace {

using Tree = boost::property_tree::ptree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"plant", {"m1", "m2", "a", "b", "d", "e", "v0", "dt", "output_scale", "substeps"}},
      {"model",
       {"path", "data_seed", "init_seed", "length", "hold", "n_p", "n_h", "max_epochs", "weight_decay", "target",
        "gate_retries"}},
      {"controller", {"N", "gamma", "beta", "q1", "initial_row", "y_min", "y_max", "u_min", "u_max"}},
      {"estimator", {"qe_x", "qe_theta", "re", "p0_x", "p0_theta", "correction"}},
      {"explore", {"M_p", "T", "seed"}},
      {"reference", {"lo", "hi", "dwell", "random_dwell", "seed"}},
      {"run", {"steps", "mode", "model_in_loop", "test_seed", "test_length", "test_hold"}},
  };
  return keys;
}

template <class T>
void read(const Tree& tree, const std::string& key, T& value) {
  if (auto child = tree.get_child_optional(key)) value = child->get_value<T>();
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  Tree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& kv : body) {
      if (!it->second.count(kv.first)) throw ConfigError("unknown key " + section + "." + kv.first);
    }
  }

  RunConfig c;
  try {
    read(tree, "plant.m1", c.plant.m1);
    read(tree, "plant.m2", c.plant.m2);
    read(tree, "plant.a", c.plant.a);
    read(tree, "plant.b", c.plant.b);
    read(tree, "plant.d", c.plant.d);
    read(tree, "plant.e", c.plant.e);
    read(tree, "plant.v0", c.plant.v0);
    read(tree, "plant.dt", c.plant.dt);
    read(tree, "plant.output_scale", c.plant.output_scale);
    read(tree, "plant.substeps", c.plant.substeps);

    read(tree, "model.path", c.model_path);
    read(tree, "model.data_seed", c.data_seed);
    read(tree, "model.init_seed", c.init_seed);
    read(tree, "model.length", c.excitation.length);
    read(tree, "model.hold", c.excitation.hold);
    read(tree, "model.n_p", c.train.dims.np);
    read(tree, "model.n_h", c.train.dims.nh);
    read(tree, "model.max_epochs", c.train.max_epochs);
    read(tree, "model.weight_decay", c.train.weight_decay);
    read(tree, "model.target", c.train.target);
    read(tree, "model.gate_retries", c.gate_retries);

    read(tree, "controller.N", c.N);
    read(tree, "controller.gamma", c.gamma);
    read(tree, "controller.beta", c.beta);
    read(tree, "controller.q1", c.q1);
    std::string row = c.initial_row == tmpc::InitialRow::Offset ? "offset" : "slack";
    read(tree, "controller.initial_row", row);
    if (row == "offset") c.initial_row = tmpc::InitialRow::Offset;
    else if (row == "slack") c.initial_row = tmpc::InitialRow::Slack;
    else throw ConfigError("controller.initial_row must be offset or slack");
    read(tree, "controller.y_min", c.y_lo);
    read(tree, "controller.y_max", c.y_hi);
    read(tree, "controller.u_min", c.u_lo);
    read(tree, "controller.u_max", c.u_hi);

    read(tree, "estimator.qe_x", c.estimator.qe_x);
    read(tree, "estimator.qe_theta", c.estimator.qe_theta);
    read(tree, "estimator.re", c.estimator.re);
    read(tree, "estimator.p0_x", c.estimator.p0_x);
    read(tree, "estimator.p0_theta", c.estimator.p0_theta);
    std::string corr = "two_stage";
    read(tree, "estimator.correction", corr);
    if (corr == "two_stage") c.estimator.correction = estimator::Correction::TwoStage;
    else if (corr == "one_shot") c.estimator.correction = estimator::Correction::OneShot;
    else throw ConfigError("estimator.correction must be two_stage or one_shot");

    read(tree, "explore.M_p", c.M_p);
    read(tree, "explore.T", c.T_pe);
    read(tree, "explore.seed", c.explore_seed);

    read(tree, "reference.lo", c.reference.lo);
    read(tree, "reference.hi", c.reference.hi);
    read(tree, "reference.dwell", c.reference.dwell);
    read(tree, "reference.random_dwell", c.reference.random_dwell);
    read(tree, "reference.seed", c.reference_seed);

    read(tree, "run.steps", c.steps);
    std::string mode = to_string(c.mode);
    read(tree, "run.mode", mode);
    c.mode = parse_mode(mode);
    read(tree, "run.model_in_loop", c.model_in_loop);
    read(tree, "run.test_seed", c.test_seed);
    read(tree, "run.test_length", c.test_length);
    read(tree, "run.test_hold", c.test_hold);
  } catch (const boost::property_tree::ptree_bad_data& e) {
    throw ConfigError(std::string("bad value in config: ") + e.what());
  }

  if (!c.model_path.empty() && std::filesystem::path(c.model_path).is_relative()) {
    const auto base = std::filesystem::path(path).parent_path();
    if (!std::filesystem::exists(c.model_path) && std::filesystem::exists(base / c.model_path))
      c.model_path = (base / c.model_path).string();
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  plant.validate();
  if (!model_path.empty() && !std::filesystem::exists(model_path)) throw ConfigError("model file not found: " + model_path);
  if (N < 1) throw ConfigError("horizon N must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (beta < 0.0 || beta >= 1.0) throw ConfigError("beta must lie in [0, 1)");
  if (!(y_lo < y_hi) || !(u_lo < u_hi)) throw ConfigError("constraint bounds are inverted");
  if (u_lo > 0.0 || u_hi < 0.0) throw ConfigError("input set must contain zero");
  if (reference.lo < y_lo || reference.hi > y_hi || reference.lo > reference.hi)
    throw ConfigError("reference levels must lie inside the output set");
  if (reference.dwell < 1) throw ConfigError("reference dwell must be positive");
  if (M_p < 1 || T_pe < 0) throw ConfigError("exploration needs M_p >= 1 and T >= 0");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (test_length < 2) throw ConfigError("test dataset too short");
  if (test_hold < 1 || excitation.hold < 1) throw ConfigError("excitation hold must be positive");
  if (estimator.re <= 0.0) throw ConfigError("measurement noise must be positive");
}

ControlSets RunConfig::sets() const {
  return ControlSets::boxes(2, VectorXd::Constant(1, y_lo), VectorXd::Constant(1, y_hi), VectorXd::Constant(1, u_lo),
                            VectorXd::Constant(1, u_hi), beta);
}

tmpc::ControllerConfig RunConfig::controller(const ModelParams& params) const {
  const auto s = sets();
  auto c = tmpc::ControllerConfig::defaults(params, s.tmpl, N, gamma);
  c.rci_weights = rci::Weights::defaults(rci::Layout::of(params, s.tmpl), params.dims.ny, q1);
  c.initial_row = initial_row;
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["version"] = DMPC_VERSION;
  j["plant"] = {{"m1", c.plant.m1}, {"m2", c.plant.m2}, {"a", c.plant.a}, {"b", c.plant.b},
                {"d", c.plant.d},   {"e", c.plant.e},   {"v0", c.plant.v0}, {"dt", c.plant.dt},
                {"output_scale", c.plant.output_scale}, {"substeps", c.plant.substeps}};
  j["model"] = {{"path", c.model_path},
                {"data_seed", c.data_seed},
                {"init_seed", c.init_seed},
                {"length", c.excitation.length},
                {"hold", c.excitation.hold},
                {"n_p", c.train.dims.np},
                {"n_h", c.train.dims.nh},
                {"max_epochs", c.train.max_epochs},
                {"weight_decay", c.train.weight_decay},
                {"target", c.train.target},
                {"gate_retries", c.gate_retries}};
  j["controller"] = {{"N", c.N},
                     {"gamma", c.gamma},
                     {"beta", c.beta},
                     {"q1", c.q1},
                     {"initial_row", c.initial_row == tmpc::InitialRow::Offset ? "offset" : "slack"},
                     {"y_min", c.y_lo},
                     {"y_max", c.y_hi},
                     {"u_min", c.u_lo},
                     {"u_max", c.u_hi}};
  j["estimator"] = {{"qe_x", c.estimator.qe_x},
                    {"qe_theta", c.estimator.qe_theta},
                    {"re", c.estimator.re},
                    {"p0_x", c.estimator.p0_x},
                    {"p0_theta", c.estimator.p0_theta},
                    {"correction", c.estimator.correction == estimator::Correction::TwoStage ? "two_stage" : "one_shot"}};
  j["explore"] = {{"M_p", c.M_p}, {"T", c.T_pe}, {"seed", c.explore_seed}};
  j["reference"] = {{"lo", c.reference.lo},
                    {"hi", c.reference.hi},
                    {"dwell", c.reference.dwell},
                    {"random_dwell", c.reference.random_dwell},
                    {"seed", c.reference_seed}};
  j["run"] = {{"steps", c.steps},
              {"mode", to_string(c.mode)},
              {"model_in_loop", c.model_in_loop},
              {"test_seed", c.test_seed},
              {"test_length", c.test_length},
              {"test_hold", c.test_hold}};
  return j;
}

void RunLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "t,y_ref,y,y_hat,u,u_p,cost,r,lyapunov,dtheta,projection_loss,tmpc_status,pe_score,solver_ms,"
         "membership,fallback,tube_violation,rejected\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.t << ',' << r.y_ref << ',' << r.y << ',' << r.y_hat << ',' << r.u << ',' << r.u_p << ',' << r.cost << ','
        << r.r << ',' << r.lyapunov << ',' << r.dtheta << ',' << r.projection_loss << ',' << r.tmpc_status << ','
        << r.pe_score << ',' << r.solver_ms << ',' << r.membership << ',' << (r.fallback ? 1 : 0) << ','
        << r.tube_violation << ',' << r.rejected << '\n';
  }
}

int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return 0;
    case RunStatus::InitialInfeasible: return 2;
    case RunStatus::MidRunInfeasible: return 3;
  }
  return 1;
}

ModelParams initial_model(const RunConfig& cfg, sysid::IdentifyResult* report) {
  if (!cfg.model_path.empty()) return load_model(cfg.model_path);
  const auto data = sysid::generate_dataset(cfg.plant, cfg.excitation, cfg.data_seed);
  auto res = sysid::identify(data, cfg.train, cfg.sets(), cfg.N, cfg.gamma, cfg.init_seed, cfg.gate_retries);
  if (report) *report = res;
  return res.fit.params;
}

namespace {

nlohmann::json vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

RunResult run_closed_loop(const RunConfig& cfg, const ModelParams& theta0, const Progress& progress) {
  cfg.validate();
  theta0.validate();
  const ControlSets sets = cfg.sets();
  sets.validate(theta0);
  const auto ctrl = cfg.controller(theta0);
  const MatrixXd ref = generate_reference(cfg.reference, cfg.steps, cfg.reference_seed, theta0.dims.ny);
  const tmpc::Layout layout(cfg.N, rci::Layout::of(theta0, sets.tmpl));

  RunResult res;
  res.initial_model = theta0;
  res.final_model = theta0;

  estimator::EstimatorConfig ecfg = cfg.estimator;
  ecfg.freeze_theta = cfg.mode != Mode::Full;
  estimator::EstimatorState est = estimator::EstimatorState::init(theta0, VectorXd::Zero(theta0.dims.nx), ecfg);
  ModelParams model = theta0;

  plant::State xp = plant::State::Zero();
  VectorXd xm = VectorXd::Zero(theta0.dims.nx);  // model-in-the-loop plant state
  explore::InputHistory history(cfg.T_pe + cfg.N, theta0.dims.nu);
  std::mt19937_64 seeds(cfg.explore_seed);
  std::optional<qp::WarmStart> warm;
  nlohmann::json last_step;

  for (int t = 0; t < cfg.steps; ++t) {
    LogRow row;
    row.t = t;
    const VectorXd yr = ref.row(t).transpose();
    const VectorXd x_hat = est.x();
    row.y_ref = yr[0];
    row.y = cfg.model_in_loop ? (theta0.C * xm)[0] : plant::output(cfg.plant, xp);
    row.y_hat = (model.C * x_hat)[0];

    const auto t0 = std::chrono::steady_clock::now();
    const auto tube = tmpc::solve_tmpc(x_hat, model, yr, ctrl, sets, warm ? &*warm : nullptr);
    row.tmpc_status = qp::to_string(tube.status);
    if (!tube.optimal()) {
      res.status = t == 0 ? RunStatus::InitialInfeasible : RunStatus::MidRunInfeasible;
      res.failed_step = t;
      res.forensics = {{"step", t},
                       {"status", row.tmpc_status},
                       {"x_hat", vec(x_hat)},
                       {"theta", vec(model.pack())},
                       {"y_ref", vec(yr)},
                       {"max_row_violation", tube.max_row_violation},
                       {"previous_step", last_step}};
      break;
    }
    const double r = rci::solve_optimal_rci(model, yr, ctrl.rci_weights, sets).cost;
    row.cost = tube.cost;
    row.r = r;
    row.lyapunov = tmpc::lyapunov_value(tube, r);
    row.tube_violation = tmpc::tube_constraint_violation(tube, model, sets);

    const auto pert = explore::sample_perturbations(cfg.beta, sets.eps_u, cfg.N, cfg.M_p, seeds());
    const auto sel = explore::select_input(x_hat, model, tube, cfg.gamma, pert, history, cfg.T_pe, sets.tmpl);
    const VectorXd u = sel.u.cwiseMax(VectorXd::Constant(1, cfg.u_lo)).cwiseMin(VectorXd::Constant(1, cfg.u_hi));
    row.u = u[0];
    row.u_p = sel.u_p[0];
    row.pe_score = sel.score;
    row.rejected = sel.rejected;
    history.push(u);

    // Plant.
    VectorXd y_next(theta0.dims.ny);
    if (cfg.model_in_loop) {
      xm = step(theta0, xm, u);
      y_next = theta0.C * xm;
    } else {
      xp = plant::rk4_step(cfg.plant, xp, u[0]);
      y_next[0] = plant::output(cfg.plant, xp);
    }

    // Estimator.
    const VectorXd theta_prev = est.theta();
    if (cfg.mode == Mode::NoAdapt) {
      est.zeta.head(theta0.dims.nx) = step(model, x_hat, u);
    } else {
      const VectorXd d = disturbance_vector(model, sets.tmpl, cfg.beta, sets.eps_u);
      const auto poly = estimator::build_theta_polytope(tube, model, sets, cfg.gamma, d, cfg.initial_row);
      const auto pred = estimator::predict(est, theta0, u);
      const auto cor = estimator::constrained_correct(est, pred, theta0, y_next, poly, ecfg);
      est = cor.state;
      row.projection_loss = cor.projection_loss;
      row.membership = cor.membership;
      row.fallback = cor.fallback;
      last_step = {{"step", t},
                   {"membership", cor.membership},
                   {"fallback", cor.fallback},
                   {"projection_status", qp::to_string(cor.status)},
                   {"projection_loss", cor.projection_loss},
                   {"zeta_unconstrained", vec(cor.unconstrained)},
                   {"zeta", vec(est.zeta)}};
      if (cfg.mode == Mode::Full) model = est.model(theta0);
    }
    row.dtheta = (est.theta() - theta_prev).norm();
    warm = tmpc::warm_start_from(tube, cfg.gamma, layout);
    row.solver_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    res.log.rows.push_back(row);
    if (progress) progress(t, row);
  }
  res.final_model = model;
  return res;
}

Summary metrics(const RunLog& log, const HPolytope& Y) {
  Summary s;
  s.steps = static_cast<int>(log.rows.size());
  for (const auto& r : log.rows) {
    s.tracking += (r.y - r.y_ref) * (r.y - r.y_ref);
    const VectorXd ex = (Y.H * VectorXd::Constant(1, r.y) - Y.h).cwiseMax(0.0);
    s.violation += ex.squaredNorm();
    s.mean_ms += r.solver_ms;
    s.max_ms = std::max(s.max_ms, r.solver_ms);
    s.infeasible += r.tmpc_status == "optimal" ? 0 : 1;
    s.fallbacks += r.fallback ? 1 : 0;
    s.max_membership = std::max(s.max_membership, r.membership);
    s.max_tube_violation = std::max(s.max_tube_violation, r.tube_violation);
  }
  if (s.steps > 0) s.mean_ms /= s.steps;
  return s;
}

double test_mse(const RunConfig& cfg, const ModelParams& model) {
  sysid::ExcitationConfig ex = cfg.excitation;
  ex.length = cfg.test_length;
  ex.hold = cfg.test_hold;
  const auto data = sysid::generate_dataset(cfg.plant, ex, cfg.test_seed);
  return sysid::simulate_mse(model, data, VectorXd::Zero(model.dims.nx));
}

nlohmann::json to_json(const Summary& s) {
  return {{"steps", s.steps},
          {"tracking_cost", s.tracking},
          {"violation_cost", s.violation},
          {"test_mse", s.test_mse},
          {"mean_step_ms", s.mean_ms},
          {"max_step_ms", s.max_ms},
          {"infeasible_steps", s.infeasible},
          {"fallbacks", s.fallbacks},
          {"max_membership_violation", s.max_membership},
          {"max_tube_violation", s.max_tube_violation}};
}

}  // namespace dmpc::harness
