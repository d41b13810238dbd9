#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pmpc/dataset.hpp"
#include "pmpc/mlp.hpp"
#include "pmpc/mpc.hpp"
#include "pmpc/train.hpp"

namespace pmpc {

struct ResultRecord {
  std::string planner;
  std::string model_kind;  // "true" | "node" | "prob_node"
  int repetition = 0;
  std::uint64_t seed = 0;
  double cost = 0.0;
  double wall_time_s = 0.0;
  int flagged_steps = 0;
};

struct ExperimentCell {
  std::string planner;
  std::string model_kind;
};

/// Mirror of the per-system benchmark table (system parameters, cost
/// matrices, noise, bounds, horizon) plus harness settings.
struct ExperimentConfig {
  std::string system = "vdp";
  std::string task = "offline";  // "offline" | "online"

  VectorXd q_diag, qf_diag, r_diag;
  double sigma = 0.0;
  double u_lo = -1.0, u_hi = 1.0;
  VectorXd x0, x_star;
  double t0 = 0.0, tf = 1.0;
  double dt = 0.05;
  double horizon = 1.0;
  int segments = 1;
  int ensemble_size = 5;
  int iterations_per_step = 15;

  DatasetConfig dataset;
  NetConfig net;
  TrainConfig train;

  std::vector<ExperimentCell> cells;    // offline cells (planner x model kind)
  std::vector<std::string> planners;    // online planners
  int repetitions = 15;
  int online_trials = 10;
  bool true_cells_once = true;

  std::uint64_t seed = 0;
  std::string output_dir;
  int threads = 1;        // parallel repetitions / cells
  PlannerSettings planner_settings;

  QuadraticCost make_cost() const;
  ControlBounds make_bounds() const;
  MpcConfig make_mpc(const std::string& planner_name) const;
};

/// Benchmark presets with the published system parameters, cost matrices
/// and simulation parameters.
ExperimentConfig vdp_experiment();
ExperimentConfig cartpole_experiment();
ExperimentConfig duffing_experiment();
ExperimentConfig preset_experiment(const std::string& system);

/// JSON round trip for config files (human-readable key-value documents).
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);

/// Run one MPC trial for a planner/model pair of an experiment.
ResultRecord run_cell(const ExperimentConfig& config, const std::string& planner,
                      const std::string& model_kind, const ModelList& models, int repetition,
                      std::uint64_t seed);

struct OfflineResults {
  std::vector<ResultRecord> records;
};

/// Per repetition: generate a dataset, train a deterministic model (M=1)
/// and a probabilistic ensemble (M) on the same data, then run every
/// requested cell. True-model cells run once when true_cells_once is set.
OfflineResults run_offline_experiment(const ExperimentConfig& config,
                                      std::ostream* progress = nullptr);

struct OnlineResults {
  std::vector<std::string> planners;
  std::vector<MatrixXd> trial_costs;  // per planner: repetitions x trials
};

/// Online loop: trial 0 applies a random Schroeder policy; each later trial
/// retrains the ensemble from scratch on all collected data, runs MPC, and
/// appends the observed trajectory to the dataset.
OnlineResults run_online_rl(const ExperimentConfig& config, std::ostream* progress = nullptr);

struct AggregateRow {
  std::string planner, model_kind;
  double mean = 0.0, stddev = 0.0;
  int count = 0;
};

std::vector<AggregateRow> aggregate_records(const std::vector<ResultRecord>& records);

void write_record_json(const ResultRecord& record, const std::string& path);
ResultRecord read_record_json(const std::string& path);
std::vector<ResultRecord> read_records(const std::vector<std::string>& paths);
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path);

/// $PMPC_OUTPUT_ROOT (default ".") joined with `rel`.
std::string output_path(const std::string& rel);

}  // namespace pmpc
