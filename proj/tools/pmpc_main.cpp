#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "pmpc/experiments.hpp"
#include "pmpc/io.hpp"
#include "pmpc/rng.hpp"

namespace {

using namespace pmpc;
using nlohmann::json;

VectorXd parse_vector(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  return Eigen::Map<VectorXd>(vals.data(), long(vals.size()));
}

void write_control_csv(const ControlSignal& signal, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "t";
  for (int i = 1; i <= signal.dim(); ++i) out << ",u" << i;
  out << "\n" << std::setprecision(17);
  for (int j = 0; j < signal.knots(); ++j) {
    out << signal.knot_times()[j];
    for (int i = 0; i < signal.dim(); ++i) out << "," << signal.knot_values()(i, j);
    out << "\n";
  }
}

void write_report_json(const SolveReport& report, const std::string& path) {
  json j;
  j["converged"] = report.converged;
  j["iterations"] = report.iterations;
  j["residual_norm"] = report.residual_norm;
  j["cost_estimate"] = report.cost_estimate;
  if (!report.failed_members.empty()) j["failed_members"] = report.failed_members;
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << j.dump(2) << "\n";
}

ModelList resolve_models(const std::string& model, const ExperimentConfig& config) {
  if (model == "true") return {make_system(config.system)};
  return load_ensemble(model).as_models();
}

int run_simulate(const std::string& system_name, const std::string& x0_csv, double tf, double dt,
                 const std::string& control, double amplitude, std::uint64_t seed,
                 const std::string& out_file) {
  const ModelPtr system = make_system(system_name);
  const VectorXd x0 = parse_vector(x0_csv);
  if (x0.size() != system->state_dim()) throw UsageError("simulate: x0 dimension mismatch");

  ControlSignal u_signal;
  if (control == "zero") {
    u_signal = ControlSignal::constant(VectorXd::Zero(system->control_dim()), 0.0, tf);
  } else if (control == "schroeder") {
    SchroederOptions opts;
    opts.dim = system->control_dim();
    opts.duration = tf;
    u_signal = schroeder_sweep(amplitude, 8, tf, seed, opts);
  } else {
    throw UsageError("simulate: unknown control '" + control + "'");
  }
  VectorXd u(system->control_dim());
  auto rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
    u_signal.eval_into(t, u);
    system->eval_f(x, u, t, dx);
  };
  const int n = std::max(1, int(std::llround(tf / dt)));
  VectorXd dense = VectorXd::LinSpaced(n + 1, 0.0, tf);
  Trajectory traj = integrate_adaptive(rhs, x0, 0.0, tf, IntegratorConfig::oracle(), &dense);
  traj.to_csv(output_path(out_file));
  std::cout << "wrote " << output_path(out_file) << " (" << traj.size() << " rows)\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_prefix,
              std::uint64_t seed_override, bool has_seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (has_seed) config.seed = seed_override;
  const ModelPtr system = make_system(config.system);
  const auto trials =
      generate_offline_dataset(*system, config.dataset, mix_seed(config.seed, 7000));
  const std::string prefix = output_path(out_prefix);
  save_datasets(trials, prefix, config.system, config.dataset.noise_sigma, config.seed);
  std::vector<TrainCurve> curves;
  const Ensemble ens = fit_ensemble(trials, config.net, config.ensemble_size, config.train,
                                    mix_seed(config.seed, 200), 2, &curves);
  save_ensemble(ens, prefix, config.seed);
  for (size_t i = 0; i < curves.size(); ++i)
    std::cout << "member " << i << ": loss " << curves[i].initial_loss << " -> "
              << curves[i].final_loss << " (" << curves[i].epochs_run << " epochs)\n";
  std::cout << "wrote " << prefix << "_params.csv\n";
  return 0;
}

int run_plan(const std::string& config_path, const std::string& system_preset,
             const std::string& planner, const std::string& model, double tf_plan,
             const std::string& out_prefix, std::uint64_t seed_override, bool has_seed,
             bool verbose) {
  ExperimentConfig config = config_path.empty() ? preset_experiment(system_preset)
                                                : load_experiment_config(config_path);
  if (has_seed) config.seed = seed_override;
  const ModelList models = resolve_models(model, config);

  ShootingProblem problem(models, config.make_cost(), config.make_bounds(), config.x0);
  problem.t0 = config.t0;
  problem.tf = tf_plan > 0.0 ? config.t0 + tf_plan
                             : std::min(config.tf, config.t0 + config.horizon);
  problem.segments = config.segments;
  problem.control_dt = config.dt;
  problem.integrator = config.planner_settings.plan_integrator;
  problem.solver = config.planner_settings.solver;
  problem.solver.max_iterations = std::max(50, config.iterations_per_step);
  problem.solver.threads = 2;
  if (verbose)
    problem.solver.log = [](const LmLogRecord& rec) {
      std::cerr << "lm iteration=" << rec.iteration << " residual=" << rec.residual_norm
                << " damping=" << rec.damping << "\n";
    };

  SolveResult result;
  if (planner == "pmp_mean_h")
    result = solve_mean_h(problem);
  else if (planner == "pmp_mean_u")
    result = solve_mean_u(problem);
  else
    throw UsageError("plan: planner must be pmp_mean_h or pmp_mean_u");

  const std::string prefix = output_path(out_prefix);
  write_control_csv(result.control, prefix + "_control.csv");
  for (size_t i = 0; i < result.member_trajectories.size(); ++i)
    result.member_trajectories[i].to_csv(prefix + "_member" + std::to_string(i) + ".csv");
  write_report_json(result.report, prefix + "_report.json");
  std::cout << "converged=" << result.report.converged
            << " residual=" << result.report.residual_norm
            << " cost=" << result.report.cost_estimate << "\n";
  return result.report.converged ? 0 : 2;
}

int run_mpc_command(const std::string& config_path, const std::string& system_preset,
                    const std::string& planner, const std::string& model,
                    const std::string& out_prefix, std::uint64_t seed_override, bool has_seed) {
  ExperimentConfig config = config_path.empty() ? preset_experiment(system_preset)
                                                : load_experiment_config(config_path);
  if (has_seed) config.seed = seed_override;
  config.planner_settings.threads = 2;
  const ModelList models = resolve_models(model, config);
  const std::string kind = model == "true" ? "true" : "ensemble";
  const ResultRecord record =
      run_cell(config, planner, kind, models, 0, mix_seed(config.seed, 42));

  const QuadraticCost cost = config.make_cost();
  const ControlBounds bounds = config.make_bounds();
  const MpcConfig mpc = config.make_mpc(planner);
  auto instance = make_planner(planner, models, cost, bounds, mpc, config.planner_settings,
                               mix_seed(config.seed, 42));
  const Plant plant{make_system(config.system), config.sigma};
  const MpcResult result = run_mpc(*instance, plant, cost, bounds, config.x0, config.t0,
                                   config.tf, mpc, mix_seed(config.seed, 42));

  const std::string prefix = output_path(out_prefix);
  result.realized.to_csv(prefix + "_trajectory.csv");
  write_control_csv(result.applied, prefix + "_control.csv");
  json j;
  j["planner"] = planner;
  j["model"] = model;
  j["realized_cost"] = result.realized_cost;
  j["flagged_steps"] = result.flagged_steps;
  j["wall_time_s"] = result.wall_time_s;
  std::ofstream out(prefix + "_result.json");
  out << j.dump(2) << "\n";
  std::cout << "realized cost " << result.realized_cost << " (" << record.wall_time_s
            << "s planning)\n";
  return 0;
}

int run_experiment(const std::string& config_path, std::uint64_t seed_override, bool has_seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (has_seed) config.seed = seed_override;
  if (config.output_dir.empty()) config.output_dir = config.system + "_results";
  if (config.task == "offline") {
    const OfflineResults results = run_offline_experiment(config, &std::cout);
    for (const auto& row : aggregate_records(results.records))
      std::cout << row.planner << " / " << row.model_kind << ": " << row.mean << " +- "
                << row.stddev << " (n=" << row.count << ")\n";
  } else if (config.task == "online") {
    const OnlineResults results = run_online_rl(config, &std::cout);
    for (size_t p = 0; p < results.planners.size(); ++p) {
      std::cout << results.planners[p] << " mean per-trial costs:";
      for (int t = 0; t < results.trial_costs[p].cols(); ++t)
        std::cout << " " << results.trial_costs[p].col(t).mean();
      std::cout << "\n";
    }
  } else {
    throw UsageError("experiment: task must be offline or online");
  }
  return 0;
}

int run_compare(const std::vector<std::string>& inputs, const std::string& out_file) {
  const std::vector<ResultRecord> records = read_records(inputs);
  const auto rows = aggregate_records(records);
  write_aggregate_csv(rows, output_path(out_file));
  for (const auto& row : rows)
    std::cout << row.planner << " / " << row.model_kind << ": " << row.mean << " +- "
              << row.stddev << " (n=" << row.count << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time optimal control with probabilistic dynamics models"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  bool has_seed = false;
  app.add_option("--seed", seed, "override config seeds")->each([&](const std::string&) {
    has_seed = true;
  });

  // simulate
  auto* sim = app.add_subcommand("simulate", "roll out a system to CSV");
  std::string sim_system = "vdp", sim_x0 = "1,1", sim_control = "zero", sim_out = "trajectory.csv";
  double sim_tf = 10.0, sim_dt = 0.05, sim_amplitude = 2.0;
  sim->add_option("--system", sim_system, "vdp|cartpole|duffing|sine_demo|linear");
  sim->add_option("--x0", sim_x0, "initial state, comma separated");
  sim->add_option("--tf", sim_tf, "final time");
  sim->add_option("--dt", sim_dt, "output grid step");
  sim->add_option("--control", sim_control, "zero|schroeder");
  sim->add_option("--amplitude", sim_amplitude, "schroeder amplitude");
  sim->add_option("--out", sim_out, "output CSV");

  // train
  auto* train = app.add_subcommand("train", "generate a dataset and fit an ensemble");
  std::string train_config, train_out = "model";
  train->add_option("--config", train_config, "experiment config JSON")->required();
  train->add_option("--out", train_out, "output prefix");

  // plan
  auto* plan = app.add_subcommand("plan", "open-loop PMP solve");
  std::string plan_config, plan_system = "vdp", plan_planner = "pmp_mean_h", plan_model = "true",
              plan_out = "plan";
  double plan_tf = -1.0;
  bool plan_verbose = false;
  plan->add_option("--config", plan_config, "experiment config JSON");
  plan->add_option("--system", plan_system, "preset when no config given");
  plan->add_option("--planner", plan_planner, "pmp_mean_h|pmp_mean_u");
  plan->add_option("--model", plan_model, "'true' or ensemble file prefix");
  plan->add_option("--horizon", plan_tf, "plan window length (default: MPC horizon)");
  plan->add_option("--out", plan_out, "output prefix");
  plan->add_flag("--verbose", plan_verbose, "stream solver diagnostics");

  // mpc
  auto* mpc_cmd = app.add_subcommand("mpc", "closed-loop receding-horizon run");
  std::string mpc_config, mpc_system = "vdp", mpc_planner = "pmp_mean_h", mpc_model = "true",
              mpc_out = "mpc";
  mpc_cmd->add_option("--config", mpc_config, "experiment config JSON");
  mpc_cmd->add_option("--system", mpc_system, "preset when no config given");
  mpc_cmd->add_option("--planner", mpc_planner, "pmp_mean_h|pmp_mean_u|icem|adam|bfgs");
  mpc_cmd->add_option("--model", mpc_model, "'true' or ensemble file prefix");
  mpc_cmd->add_option("--out", mpc_out, "output prefix");

  // experiment
  auto* exp = app.add_subcommand("experiment", "offline/online benchmark harness");
  std::string exp_config;
  exp->add_option("--config", exp_config, "experiment config JSON")->required();

  // preset
  auto* preset = app.add_subcommand("preset", "write a benchmark config file");
  std::string preset_system = "vdp", preset_out = "config.json";
  preset->add_option("--system", preset_system, "vdp|cartpole|duffing");
  preset->add_option("--out", preset_out, "output JSON path");

  // compare
  auto* cmp = app.add_subcommand("compare", "aggregate result records into a table");
  std::vector<std::string> cmp_inputs;
  std::string cmp_out = "table.csv";
  cmp->add_option("--records", cmp_inputs, "record JSON files")->required();
  cmp->add_option("--out", cmp_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed())
      return run_simulate(sim_system, sim_x0, sim_tf, sim_dt, sim_control, sim_amplitude,
                          has_seed ? seed : 1234, sim_out);
    if (train->parsed()) return run_train(train_config, train_out, seed, has_seed);
    if (plan->parsed())
      return run_plan(plan_config, plan_system, plan_planner, plan_model, plan_tf, plan_out,
                      seed, has_seed, plan_verbose);
    if (mpc_cmd->parsed())
      return run_mpc_command(mpc_config, mpc_system, mpc_planner, mpc_model, mpc_out, seed,
                             has_seed);
    if (exp->parsed()) return run_experiment(exp_config, seed, has_seed);
    if (preset->parsed()) {
      save_experiment_config(preset_experiment(preset_system), output_path(preset_out));
      std::cout << "wrote " << output_path(preset_out) << "\n";
      return 0;
    }
    if (cmp->parsed()) return run_compare(cmp_inputs, cmp_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
