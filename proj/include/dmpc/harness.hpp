#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmpc/estimator.hpp"
#include "dmpc/explore.hpp"
#include "dmpc/plant.hpp"
#include "dmpc/sysid.hpp"

namespace dmpc::harness {

enum class Mode { NoAdapt, StateOnly, Full };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct ReferenceSpec {
  double lo = -0.8;
  double hi = 0.8;
  int dwell = 500;
  bool random_dwell = false;  // dwell drawn uniformly in [dwell/2, 3 dwell/2]
};

/// Piecewise-constant levels drawn uniformly in [lo, hi]; one row per step.
Eigen::MatrixXd generate_reference(const ReferenceSpec& spec, int duration, std::uint64_t seed, int ny = 1);

struct RunConfig {
  plant::PlantConfig plant;

  // Initial model: loaded from model_path, or identified when the path is empty.
  std::string model_path;
  sysid::ExcitationConfig excitation;
  sysid::TrainConfig train;
  std::uint64_t data_seed = 3;
  std::uint64_t init_seed = 2;
  int gate_retries = 3;

  int N = 2;
  double gamma = 0.95;
  double beta = 0.3;
  double q1 = 10.0;
  tmpc::InitialRow initial_row = tmpc::InitialRow::Offset;
  double y_lo = -0.8, y_hi = 0.8;
  double u_lo = -1.0, u_hi = 1.0;

  estimator::EstimatorConfig estimator;

  int M_p = 20;
  int T_pe = 10;
  std::uint64_t explore_seed = 1;

  ReferenceSpec reference;
  std::uint64_t reference_seed = 1;

  int steps = 5000;
  Mode mode = Mode::Full;
  bool model_in_loop = false;

  std::uint64_t test_seed = 1001;
  int test_length = 10000;
  int test_hold = 1;

  static RunConfig paper_example();
  /// Key/value file with sections; unknown keys are an error, missing keys keep their defaults.
  static RunConfig load(const std::string& path);
  void validate() const;

  ControlSets sets() const;
  tmpc::ControllerConfig controller(const ModelParams& params) const;
};

nlohmann::json to_json(const RunConfig& cfg);

struct LogRow {
  int t = 0;
  double y_ref = 0.0;
  double y = 0.0;
  double y_hat = 0.0;
  double u = 0.0;
  double u_p = 0.0;
  double cost = 0.0;
  double r = 0.0;
  double lyapunov = 0.0;
  double dtheta = 0.0;
  double projection_loss = 0.0;
  std::string tmpc_status;
  double pe_score = 0.0;
  double solver_ms = 0.0;
  double membership = 0.0;
  bool fallback = false;
  double tube_violation = 0.0;
  int rejected = 0;
};

struct RunLog {
  static constexpr const char* schema = "dmpc-runlog/1";
  std::vector<LogRow> rows;

  void write_csv(const std::string& path) const;
  std::size_t size() const { return rows.size(); }
};

enum class RunStatus { Completed, InitialInfeasible, MidRunInfeasible };

int exit_code(RunStatus s);

struct RunResult {
  RunLog log;
  ModelParams initial_model;
  ModelParams final_model;
  RunStatus status = RunStatus::Completed;
  int failed_step = -1;
  nlohmann::json forensics;  // filled on infeasibility
};

using Progress = std::function<void(int step, const LogRow&)>;

RunResult run_closed_loop(const RunConfig& cfg, const ModelParams& theta0, const Progress& progress = {});

/// Initial model per cfg: load model_path or identify with the gate.
ModelParams initial_model(const RunConfig& cfg, sysid::IdentifyResult* report = nullptr);

struct Summary {
  int steps = 0;
  double tracking = 0.0;   // sum |y - y_ref|^2
  double violation = 0.0;  // sum max(H y - h, 0)^2
  double test_mse = 0.0;
  double mean_ms = 0.0;
  double max_ms = 0.0;
  int infeasible = 0;
  int fallbacks = 0;
  double max_membership = 0.0;
  double max_tube_violation = 0.0;
};

Summary metrics(const RunLog& log, const HPolytope& Y);

/// Test MSE of a model on the held-out dataset described by cfg.
double test_mse(const RunConfig& cfg, const ModelParams& model);

nlohmann::json to_json(const Summary& s);

}  // namespace dmpc::harness
