#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "dmpc/harness.hpp"

using namespace dmpc;
namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

harness::RunConfig load_config(const std::string& path) {
  return path.empty() ? harness::RunConfig::paper_example() : harness::RunConfig::load(path);
}

int cmd_dataset(const std::string& config, std::uint64_t seed, int length, const std::string& out) {
  auto cfg = load_config(config);
  auto ex = cfg.excitation;
  if (length > 0) ex.length = length;
  const auto data = sysid::generate_dataset(cfg.plant, ex, seed);
  sysid::write_csv(data, out);
  std::cout << "wrote " << data.length() << " samples to " << out << '\n';
  return 0;
}

int cmd_sysid(const std::string& config, const std::string& data_path, const std::string& out, std::uint64_t seed) {
  auto cfg = load_config(config);
  const auto data = data_path.empty() ? sysid::generate_dataset(cfg.plant, cfg.excitation, cfg.data_seed)
                                      : sysid::read_csv(data_path, cfg.plant.output_scale);
  const auto res = sysid::identify(data, cfg.train, cfg.sets(), cfg.N, cfg.gamma, seed, cfg.gate_retries);
  save_model(res.fit.params, out);
  std::cout << "train_mse " << res.fit.train_mse << " epochs " << res.fit.epochs << " attempts " << res.attempts
            << " weight_decay " << res.weight_decay << " seed " << res.seed << '\n';
  std::cout << "gate " << (res.gate.feasible ? "feasible" : "infeasible") << " status " << qp::to_string(res.gate.status)
            << " max_violation " << res.gate.max_violation << '\n';
  if (!res.fit.reached_target) std::cerr << "warning: train MSE above target " << cfg.train.target << '\n';
  return res.gate.feasible ? 0 : 2;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> mode,
            std::optional<double> beta, std::optional<int> steps, std::optional<std::string> model,
            const std::string& out_dir, bool quiet) {
  auto cfg = load_config(config);
  if (seed) {
    cfg.reference_seed = *seed;
    cfg.explore_seed = *seed;
  }
  if (mode) cfg.mode = harness::parse_mode(*mode);
  if (beta) cfg.beta = *beta;
  if (steps) cfg.steps = *steps;
  if (model) cfg.model_path = *model;
  cfg.validate();

  fs::create_directories(out_dir);
  const ModelParams theta0 = harness::initial_model(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = harness::run_closed_loop(cfg, theta0, [&](int t, const harness::LogRow& r) {
    if (!quiet && (t + 1) % 500 == 0)
      std::cerr << "step " << t + 1 << "/" << cfg.steps << "  L " << r.lyapunov << "  y " << r.y << "  y_ref "
                << r.y_ref << '\n';
  });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  res.log.write_csv((fs::path(out_dir) / "run.csv").string());
  nlohmann::json side = harness::to_json(cfg);
  side["schema"] = harness::RunLog::schema;
  write_json(fs::path(out_dir) / "run.json", side);
  save_model(res.final_model, (fs::path(out_dir) / "model_final.json").string());

  auto summary = harness::metrics(res.log, cfg.sets().Y);
  summary.test_mse = harness::test_mse(cfg, res.final_model);
  auto sj = harness::to_json(summary);
  sj["initial_test_mse"] = harness::test_mse(cfg, theta0);
  sj["mode"] = harness::to_string(cfg.mode);
  sj["beta"] = cfg.beta;
  sj["wall_s"] = wall;
  sj["status"] = harness::exit_code(res.status);
  if (res.status != harness::RunStatus::Completed) {
    sj["failed_step"] = res.failed_step;
    write_json(fs::path(out_dir) / "forensics.json", res.forensics);
  }
  write_json(fs::path(out_dir) / "summary.json", sj);
  std::cout << std::setw(2) << sj << '\n';
  return harness::exit_code(res.status);
}

int cmd_verify_rci(const std::string& config, const std::string& model_path, double y_ref, int samples,
                   std::optional<double> beta) {
  auto cfg = load_config(config);
  if (beta) cfg.beta = *beta;
  const ModelParams m = model_path.empty() ? harness::initial_model(cfg) : load_model(model_path);
  const auto sets = cfg.sets();
  const auto ctrl = cfg.controller(m);
  const auto sol = rci::solve_optimal_rci(m, Eigen::VectorXd::Constant(1, y_ref), ctrl.rci_weights, sets);
  std::cout << "status " << qp::to_string(sol.status) << " r " << sol.cost << '\n';
  if (!sol.optimal()) return 2;
  const auto rep = rci::verify_rci(sol, m, sets, samples);
  std::cout << "z_s " << sol.z_s.transpose() << "\ns " << sol.s.transpose() << "\nvertex_violation "
            << rep.vertex_violation << " (" << rep.triples << " triples)\nsample_violation " << rep.sample_violation
            << " (" << rep.samples << " samples)\noutput_violation " << rep.output_violation << "\ninput_violation "
            << rep.input_violation << '\n';
  return rep.worst() <= 1e-7 ? 0 : 4;
}

int cmd_bench(const std::string& config, int steps, std::optional<std::string> model) {
  auto cfg = load_config(config);
  cfg.steps = steps;
  if (model) cfg.model_path = *model;
  const ModelParams theta0 = harness::initial_model(cfg);
  const auto res = harness::run_closed_loop(cfg, theta0);
  const auto s = harness::metrics(res.log, cfg.sets().Y);
  std::cout << "steps " << s.steps << "\nmean_step_ms " << s.mean_ms << "\nmax_step_ms " << s.max_ms
            << "\nreference_ms 8 (informational)\n";
  return harness::exit_code(res.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual tube MPC for quasi-LPV models"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("--config", config, "Configuration file (defaults to the paper_example preset)");

  auto* ds = app.add_subcommand("dataset", "Generate an excitation dataset from the plant");
  std::uint64_t ds_seed = 3;
  int ds_len = 0;
  std::string ds_out = "data.csv";
  ds->add_option("--seed", ds_seed);
  ds->add_option("--length", ds_len);
  ds->add_option("--out", ds_out);

  auto* si = app.add_subcommand("sysid", "Fit the initial model and check TMPC feasibility");
  std::string si_data, si_out = "model.json";
  std::uint64_t si_seed = 2;
  si->add_option("--data", si_data, "CSV with columns t,u,y (generated from the plant if omitted)");
  si->add_option("--out", si_out);
  si->add_option("--seed", si_seed);

  auto* run = app.add_subcommand("run", "Closed-loop simulation");
  std::optional<std::uint64_t> run_seed;
  std::optional<std::string> run_mode, run_model;
  std::optional<double> run_beta;
  std::optional<int> run_steps;
  std::string run_out = "out";
  bool quiet = false;
  run->add_option("--seed", run_seed, "Reference and exploration seed");
  run->add_option("--mode", run_mode)->check(CLI::IsMember({"no_adapt", "state_only", "full"}));
  run->add_option("--beta", run_beta);
  run->add_option("--steps", run_steps);
  run->add_option("--model", run_model);
  run->add_option("--out", run_out);
  run->add_flag("--quiet", quiet);

  auto* vr = app.add_subcommand("verify-rci", "Solve and certify the optimal RCI set");
  std::string vr_model;
  double vr_ref = 0.0;
  int vr_samples = 10000;
  std::optional<double> vr_beta;
  vr->add_option("--model", vr_model);
  vr->add_option("--y-ref", vr_ref);
  vr->add_option("--samples", vr_samples);
  vr->add_option("--beta", vr_beta);

  auto* be = app.add_subcommand("bench", "Per-step timing of the closed loop");
  int be_steps = 500;
  std::optional<std::string> be_model;
  be->add_option("--steps", be_steps);
  be->add_option("--model", be_model);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ds) return cmd_dataset(config, ds_seed, ds_len, ds_out);
    if (*si) return cmd_sysid(config, si_data, si_out, si_seed);
    if (*run) return cmd_run(config, run_seed, run_mode, run_beta, run_steps, run_model, run_out, quiet);
    if (*vr) return cmd_verify_rci(config, vr_model, vr_ref, vr_samples, vr_beta);
    if (*be) return cmd_bench(config, be_steps, be_model);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
