#include "pmpc/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "pmpc/io.hpp"
#include "pmpc/parallel.hpp"
#include "pmpc/rng.hpp"

namespace pmpc {

using nlohmann::json;

QuadraticCost ExperimentConfig::make_cost() const {
  return QuadraticCost::diagonal(q_diag, qf_diag, r_diag, x_star);
}

ControlBounds ExperimentConfig::make_bounds() const {
  return ControlBounds::uniform(u_lo, u_hi, int(r_diag.size()));
}

MpcConfig ExperimentConfig::make_mpc(const std::string& planner_name) const {
  MpcConfig mpc;
  mpc.horizon = horizon;
  mpc.dt = dt;
  mpc.iterations_per_step = iterations_per_step;
  mpc.planner = planner_name;
  return mpc;
}

namespace {

ExperimentConfig base_config() {
  ExperimentConfig c;
  c.planner_settings.plan_integrator = IntegratorConfig::planning();
  c.planner_settings.threads = 1;
  c.threads = 2;
  c.train.epochs = 150;
  c.train.patience = 10;
  return c;
}

MatrixXd box(std::initializer_list<std::pair<double, double>> dims) {
  MatrixXd b(long(dims.size()), 2);
  int i = 0;
  for (const auto& [lo, hi] : dims) {
    b(i, 0) = lo;
    b(i, 1) = hi;
    ++i;
  }
  return b;
}

}  // namespace

ExperimentConfig vdp_experiment() {
  ExperimentConfig c = base_config();
  c.system = "vdp";
  c.q_diag = VectorXd::Ones(2);
  c.qf_diag = VectorXd::Ones(2);
  c.r_diag = VectorXd::Constant(1, 0.5);
  c.sigma = 0.01;
  c.u_lo = -2.0;
  c.u_hi = 2.0;
  c.x0 = (VectorXd(2) << 1.0, 1.0).finished();
  c.x_star = VectorXd::Zero(2);
  c.t0 = 0.0;
  c.tf = 10.0;
  c.dt = 0.05;
  c.horizon = 3.0;
  c.segments = 4;
  c.ensemble_size = 5;
  c.iterations_per_step = 15;
  c.repetitions = 15;

  c.dataset.n_trials = 25;
  c.dataset.trial_length = 10.0;
  c.dataset.obs_interval = 0.05;
  c.dataset.excitation.amplitude = 2.0;
  c.dataset.excitation.n_harmonics = 8;
  c.dataset.init_state_box = box({{-2, 2}, {-2, 2}});
  c.dataset.noise_sigma = 0.01;

  c.net = NetConfig::mlp(2, 1);
  c.train.substep_h = 0.025;
  return c;
}

ExperimentConfig cartpole_experiment() {
  ExperimentConfig c = base_config();
  c.system = "cartpole";
  c.q_diag = (VectorXd(4) << 1.0, 1.0, 0.1, 0.1).finished();
  c.qf_diag = (VectorXd(4) << 1.0, 5.0, 1.0, 1.0).finished();
  c.r_diag = VectorXd::Constant(1, 0.05);
  c.sigma = 0.0;
  c.u_lo = -20.0;
  c.u_hi = 20.0;
  c.x0 = VectorXd::Zero(4);
  c.x_star = (VectorXd(4) << 1.0, M_PI, 0.0, 0.0).finished();
  c.t0 = 0.0;
  c.tf = 5.0;
  c.dt = 0.02;
  c.horizon = 1.0;
  c.segments = 2;
  c.ensemble_size = 5;
  c.iterations_per_step = 25;
  c.repetitions = 15;

  c.dataset.n_trials = 50;
  c.dataset.trial_length = 5.0;
  c.dataset.obs_interval = 0.02;
  c.dataset.excitation.amplitude = 20.0;
  c.dataset.excitation.n_harmonics = 8;
  c.dataset.init_state_box = box({{-2, 2}, {-M_PI, M_PI}, {-2, 2}, {-3, 3}});
  c.dataset.noise_sigma = 0.0;

  c.net = NetConfig::mlp(4, 1);
  c.train.substep_h = 0.01;
  return c;
}

ExperimentConfig duffing_experiment() {
  ExperimentConfig c = base_config();
  c.system = "duffing";
  c.task = "online";
  c.q_diag = VectorXd::Constant(2, 5.0);
  c.qf_diag = VectorXd::Constant(2, 5.0);
  c.r_diag = VectorXd::Constant(1, 1.0);
  c.sigma = 0.01;
  c.u_lo = -2.0;
  c.u_hi = 2.0;
  c.x0 = (VectorXd(2) << 1.5, 1.0).finished();
  c.x_star = VectorXd::Zero(2);
  c.t0 = 0.0;
  c.tf = 5.0;
  c.dt = 0.05;
  c.horizon = 2.0;
  c.segments = 5;
  c.ensemble_size = 5;
  c.iterations_per_step = 15;
  c.repetitions = 10;
  c.online_trials = 10;
  c.planners = {"pmp_mean_h", "icem"};

  c.dataset.n_trials = 1;
  c.dataset.trial_length = 5.0;
  c.dataset.obs_interval = 0.05;
  c.dataset.excitation.amplitude = 2.0;
  c.dataset.excitation.n_harmonics = 8;
  c.dataset.init_state_box = box({{-2, 2}, {-2, 2}});
  c.dataset.noise_sigma = 0.01;

  c.net = NetConfig::mlp(2, 1);
  c.train.substep_h = 0.025;
  return c;
}

ExperimentConfig preset_experiment(const std::string& system) {
  if (system == "vdp") return vdp_experiment();
  if (system == "cartpole") return cartpole_experiment();
  if (system == "duffing") return duffing_experiment();
  throw UsageError("preset_experiment: no preset for '" + system + "'");
}

namespace {

VectorXd json_vector(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<VectorXd>(v.data(), long(v.size()));
}

json vector_json(const VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig c = preset_experiment(j.value("system", std::string("vdp")));
  if (j.contains("task")) c.task = j.at("task").get<std::string>();
  if (j.contains("Q")) c.q_diag = json_vector(j.at("Q"));
  if (j.contains("Qf")) c.qf_diag = json_vector(j.at("Qf"));
  if (j.contains("R")) c.r_diag = json_vector(j.at("R"));
  if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
  if (j.contains("bounds")) {
    c.u_lo = j.at("bounds").at(0).get<double>();
    c.u_hi = j.at("bounds").at(1).get<double>();
  }
  if (j.contains("x0")) c.x0 = json_vector(j.at("x0"));
  if (j.contains("x_star")) c.x_star = json_vector(j.at("x_star"));
  if (j.contains("t0")) c.t0 = j.at("t0").get<double>();
  if (j.contains("tf")) c.tf = j.at("tf").get<double>();
  if (j.contains("dt")) c.dt = j.at("dt").get<double>();
  if (j.contains("horizon")) c.horizon = j.at("horizon").get<double>();
  if (j.contains("segments")) c.segments = j.at("segments").get<int>();
  if (j.contains("ensemble_size")) c.ensemble_size = j.at("ensemble_size").get<int>();
  if (j.contains("iterations_per_step"))
    c.iterations_per_step = j.at("iterations_per_step").get<int>();
  if (j.contains("repetitions")) c.repetitions = j.at("repetitions").get<int>();
  if (j.contains("online_trials")) c.online_trials = j.at("online_trials").get<int>();
  if (j.contains("true_cells_once")) c.true_cells_once = j.at("true_cells_once").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    if (d.contains("n_trials")) c.dataset.n_trials = d.at("n_trials").get<int>();
    if (d.contains("trial_length")) c.dataset.trial_length = d.at("trial_length").get<double>();
    if (d.contains("obs_interval")) c.dataset.obs_interval = d.at("obs_interval").get<double>();
    if (d.contains("amplitude"))
      c.dataset.excitation.amplitude = d.at("amplitude").get<double>();
    if (d.contains("harmonics"))
      c.dataset.excitation.n_harmonics = d.at("harmonics").get<int>();
    if (d.contains("period")) c.dataset.excitation.period = d.at("period").get<double>();
    if (d.contains("noise_sigma")) c.dataset.noise_sigma = d.at("noise_sigma").get<double>();
    if (d.contains("init_box")) {
      const auto rows = d.at("init_box").get<std::vector<std::vector<double>>>();
      MatrixXd b(long(rows.size()), 2);
      for (size_t i = 0; i < rows.size(); ++i) {
        b(long(i), 0) = rows[i][0];
        b(long(i), 1) = rows[i][1];
      }
      c.dataset.init_state_box = b;
    }
  }
  if (j.contains("net")) {
    const json& n = j.at("net");
    std::vector<int> hidden = n.value("hidden", std::vector<int>{32, 32});
    const int d_x = int(c.x0.size());
    const int d_u = int(c.r_diag.size());
    c.net = NetConfig::mlp(d_x, d_u, hidden);
    if (n.contains("activation"))
      c.net.activation = activation_from_string(n.at("activation").get<std::string>());
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<int>();
    if (t.contains("learning_rate")) c.train.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("rollout_len")) c.train.rollout_len = t.at("rollout_len").get<int>();
    if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("substep_h")) c.train.substep_h = t.at("substep_h").get<double>();
    if (t.contains("weight_decay")) c.train.weight_decay = t.at("weight_decay").get<double>();
    if (t.contains("val_fraction")) c.train.val_fraction = t.at("val_fraction").get<double>();
    if (t.contains("patience")) c.train.patience = t.at("patience").get<int>();
  }
  if (j.contains("cells")) {
    c.cells.clear();
    for (const auto& cell : j.at("cells"))
      c.cells.push_back({cell.at("planner").get<std::string>(),
                         cell.at("model").get<std::string>()});
  }
  if (j.contains("planners")) c.planners = j.at("planners").get<std::vector<std::string>>();
  if (j.contains("planner")) {
    const json& p = j.at("planner");
    if (p.contains("rollout_substeps"))
      c.planner_settings.rollout_substeps = p.at("rollout_substeps").get<int>();
    if (p.contains("threads")) c.planner_settings.threads = p.at("threads").get<int>();
    if (p.contains("plan_rtol")) c.planner_settings.plan_integrator.rtol = p.at("plan_rtol").get<double>();
    if (p.contains("plan_atol")) c.planner_settings.plan_integrator.atol = p.at("plan_atol").get<double>();
    if (p.contains("population")) c.planner_settings.icem.population = p.at("population").get<int>();
    if (p.contains("elite_frac")) c.planner_settings.icem.elite_frac = p.at("elite_frac").get<double>();
    if (p.contains("noise_beta")) c.planner_settings.icem.noise_beta = p.at("noise_beta").get<double>();
    if (p.contains("learning_rate")) c.planner_settings.grad.learning_rate = p.at("learning_rate").get<double>();
  }
  // the dataset generation shares the observation noise with the plant
  if (!j.contains("dataset") || !j.at("dataset").contains("noise_sigma"))
    c.dataset.noise_sigma = c.sigma;
  return c;
}

void save_experiment_config(const ExperimentConfig& c, const std::string& path) {
  json j;
  j["system"] = c.system;
  j["task"] = c.task;
  j["Q"] = vector_json(c.q_diag);
  j["Qf"] = vector_json(c.qf_diag);
  j["R"] = vector_json(c.r_diag);
  j["sigma"] = c.sigma;
  j["bounds"] = {c.u_lo, c.u_hi};
  j["x0"] = vector_json(c.x0);
  j["x_star"] = vector_json(c.x_star);
  j["t0"] = c.t0;
  j["tf"] = c.tf;
  j["dt"] = c.dt;
  j["horizon"] = c.horizon;
  j["segments"] = c.segments;
  j["ensemble_size"] = c.ensemble_size;
  j["iterations_per_step"] = c.iterations_per_step;
  j["repetitions"] = c.repetitions;
  j["online_trials"] = c.online_trials;
  j["true_cells_once"] = c.true_cells_once;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  json d;
  d["n_trials"] = c.dataset.n_trials;
  d["trial_length"] = c.dataset.trial_length;
  d["obs_interval"] = c.dataset.obs_interval;
  d["amplitude"] = c.dataset.excitation.amplitude;
  d["harmonics"] = c.dataset.excitation.n_harmonics;
  d["period"] = c.dataset.excitation.period;
  d["noise_sigma"] = c.dataset.noise_sigma;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < c.dataset.init_state_box.rows(); ++i)
    rows.push_back({c.dataset.init_state_box(i, 0), c.dataset.init_state_box(i, 1)});
  d["init_box"] = rows;
  j["dataset"] = d;
  json n;
  std::vector<int> hidden(c.net.layer_sizes.begin() + 1, c.net.layer_sizes.end() - 1);
  n["hidden"] = hidden;
  n["activation"] = to_string(c.net.activation);
  j["net"] = n;
  json t;
  t["epochs"] = c.train.epochs;
  t["learning_rate"] = c.train.learning_rate;
  t["rollout_len"] = c.train.rollout_len;
  t["batch_size"] = c.train.batch_size;
  t["substep_h"] = c.train.substep_h;
  t["weight_decay"] = c.train.weight_decay;
  t["val_fraction"] = c.train.val_fraction;
  t["patience"] = c.train.patience;
  j["train"] = t;
  if (!c.cells.empty()) {
    json cells = json::array();
    for (const auto& cell : c.cells) cells.push_back({{"planner", cell.planner}, {"model", cell.model_kind}});
    j["cells"] = cells;
  }
  if (!c.planners.empty()) j["planners"] = c.planners;

  std::ofstream out(path);
  if (!out) throw UsageError("cannot write config file " + path);
  out << j.dump(2) << "\n";
}

ResultRecord run_cell(const ExperimentConfig& config, const std::string& planner,
                      const std::string& model_kind, const ModelList& models, int repetition,
                      std::uint64_t seed) {
  const QuadraticCost cost = config.make_cost();
  const ControlBounds bounds = config.make_bounds();
  const MpcConfig mpc = config.make_mpc(planner);
  const Plant plant{make_system(config.system), config.sigma};

  auto instance = make_planner(planner, models, cost, bounds, mpc, config.planner_settings, seed);
  const MpcResult result =
      run_mpc(*instance, plant, cost, bounds, config.x0, config.t0, config.tf, mpc, seed);

  ResultRecord record;
  record.planner = planner;
  record.model_kind = model_kind;
  record.repetition = repetition;
  record.seed = seed;
  record.cost = result.realized_cost;
  record.wall_time_s = result.wall_time_s;
  record.flagged_steps = result.flagged_steps;
  return record;
}

namespace {

std::uint64_t cell_seed(std::uint64_t base, int rep, const std::string& planner,
                        const std::string& kind) {
  std::uint64_t h = mix_seed(base, std::uint64_t(rep));
  for (char ch : planner + "|" + kind) h = mix_seed(h, std::uint64_t(ch));
  return h;
}

}  // namespace

OfflineResults run_offline_experiment(const ExperimentConfig& config, std::ostream* progress) {
  std::vector<ExperimentCell> cells = config.cells;
  if (cells.empty()) {
    const std::vector<std::string> planners = {"pmp_mean_h", "pmp_mean_u", "icem", "bfgs", "adam"};
    for (const auto& p : planners)
      for (const std::string kind : {"true", "node", "prob_node"}) cells.push_back({p, kind});
  }
  bool need_node = false, need_prob = false;
  for (const auto& cell : cells) {
    need_node |= cell.model_kind == "node";
    need_prob |= cell.model_kind == "prob_node";
  }

  const ModelPtr system = make_system(config.system);
  std::mutex progress_mutex;
  std::vector<std::vector<ResultRecord>> per_rep(size_t(config.repetitions));

  parallel_for(
      config.repetitions,
      [&](int rep) {
        DatasetConfig dataset_cfg = config.dataset;
        const auto trials =
            generate_offline_dataset(*system, dataset_cfg, mix_seed(config.seed, 7000 + rep));

        Ensemble det, prob;
        if (need_node)
          det = fit_ensemble(trials, config.net, 1, config.train,
                             mix_seed(config.seed, 100 + rep), 1);
        if (need_prob)
          prob = fit_ensemble(trials, config.net, config.ensemble_size, config.train,
                              mix_seed(config.seed, 200 + rep), 1);

        for (const auto& cell : cells) {
          if (cell.model_kind == "true" && config.true_cells_once && rep > 0) continue;
          ModelList models;
          if (cell.model_kind == "true")
            models = {system};
          else if (cell.model_kind == "node")
            models = det.as_models();
          else if (cell.model_kind == "prob_node")
            models = prob.as_models();
          else
            throw UsageError("unknown model kind '" + cell.model_kind + "'");

          ResultRecord rec = run_cell(config, cell.planner, cell.model_kind, models, rep,
                                      cell_seed(config.seed, rep, cell.planner, cell.model_kind));
          per_rep[size_t(rep)].push_back(rec);
          if (progress) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            (*progress) << "[offline " << config.system << "] rep " << rep << " "
                        << cell.planner << "/" << cell.model_kind << " cost=" << rec.cost
                        << " (" << rec.wall_time_s << "s)\n";
          }
        }
      },
      config.threads);

  OfflineResults out;
  for (auto& recs : per_rep)
    for (auto& r : recs) out.records.push_back(std::move(r));

  if (!config.output_dir.empty()) {
    namespace fs = std::filesystem;
    const std::string dir = output_path(config.output_dir);
    fs::create_directories(dir);
    for (const auto& rec : out.records) {
      std::ostringstream name;
      name << dir << "/" << config.system << "_" << rec.planner << "_" << rec.model_kind
           << "_rep" << rec.repetition << ".json";
      write_record_json(rec, name.str());
    }
    write_aggregate_csv(aggregate_records(out.records),
                        dir + "/" + config.system + "_offline_table.csv");
  }
  return out;
}

namespace {

/// Applies an open-loop control to the plant: returns the noisy observations
/// at the dt grid and the realized cost.
std::pair<TrialDataset, double> apply_policy(const ModelPtr& system, const QuadraticCost& cost,
                                             const ControlBounds& bounds, const VectorXd& x0,
                                             const ControlSignal& policy, double t0, double tf,
                                             double dt, double sigma, std::uint64_t noise_seed) {
  const int d = int(x0.size());
  const int d_u = bounds.dim();
  VectorXd u(d_u);
  auto rhs = [&](double t, const VectorXd& z, VectorXd& dz) {
    policy.eval_into(t, u);
    bounds.clamp_in_place(u);
    system->eval_f(z.head(d), u, t, dz.head(d));
    dz[d] = cost.running(z.head(d), u);
  };
  const int n_obs = std::max(1, int(std::llround((tf - t0) / dt)));
  VectorXd obs_times = VectorXd::LinSpaced(n_obs + 1, t0, tf);
  VectorXd z0(d + 1);
  z0 << x0, 0.0;
  const Trajectory traj =
      integrate_adaptive(rhs, z0, t0, tf, IntegratorConfig::oracle(), &obs_times);

  Rng rng(noise_seed);
  TrialDataset trial;
  trial.times = traj.times;
  trial.observations = traj.states.topRows(d);
  if (sigma > 0.0)
    for (int j = 0; j < trial.observations.cols(); ++j)
      for (int i = 0; i < d; ++i) trial.observations(i, j) += sigma * rng.normal();
  MatrixXd u_values(d_u, traj.size());
  for (int j = 0; j < traj.size(); ++j) {
    policy.eval_into(traj.times[j], u);
    bounds.clamp_in_place(u);
    u_values.col(j) = u;
  }
  trial.control = ControlSignal(trial.times, u_values);
  const double realized = traj.back()[d] + cost.terminal(traj.back().head(d));
  return {std::move(trial), realized};
}

TrialDataset observe_mpc_run(const MpcResult& result, double t0, double tf, double dt,
                             double sigma, std::uint64_t noise_seed, int trial_index) {
  const int n_obs = std::max(1, int(std::llround((tf - t0) / dt)));
  const int d = result.realized.dim();
  Rng rng(noise_seed);
  TrialDataset trial;
  trial.times = VectorXd::LinSpaced(n_obs + 1, t0, tf);
  trial.observations.resize(d, n_obs + 1);
  // the realized trajectory contains every dt-grid point; pick nearest
  int cursor = 0;
  for (int j = 0; j <= n_obs; ++j) {
    const double tj = trial.times[j];
    while (cursor + 1 < result.realized.size() &&
           std::abs(result.realized.times[cursor + 1] - tj) <=
               std::abs(result.realized.times[cursor] - tj))
      ++cursor;
    trial.observations.col(j) = result.realized.states.col(cursor);
  }
  if (sigma > 0.0)
    for (int j = 0; j < trial.observations.cols(); ++j)
      for (int i = 0; i < d; ++i) trial.observations(i, j) += sigma * rng.normal();
  // resample the applied control at the observation grid
  MatrixXd u_values(result.applied.dim(), n_obs + 1);
  VectorXd u(result.applied.dim());
  for (int j = 0; j <= n_obs; ++j) {
    result.applied.eval_into(trial.times[j], u);
    u_values.col(j) = u;
  }
  trial.control = ControlSignal(trial.times, u_values);
  trial.trial_index = trial_index;
  return trial;
}

}  // namespace

OnlineResults run_online_rl(const ExperimentConfig& config, std::ostream* progress) {
  std::vector<std::string> planners = config.planners;
  if (planners.empty()) planners = {"pmp_mean_h", "icem"};
  const int reps = config.repetitions;
  const int trials = config.online_trials;
  const ModelPtr system = make_system(config.system);
  const QuadraticCost cost = config.make_cost();
  const ControlBounds bounds = config.make_bounds();

  OnlineResults out;
  out.planners = planners;
  out.trial_costs.assign(planners.size(), MatrixXd::Zero(reps, trials));

  std::mutex progress_mutex;
  const int units = int(planners.size()) * reps;
  parallel_for(
      units,
      [&](int unit) {
        const int pi = unit / reps;
        const int rep = unit % reps;
        const std::string& planner = planners[size_t(pi)];
        const std::uint64_t unit_seed = cell_seed(config.seed, rep, planner, "online");

        std::vector<TrialDataset> data;
        const double period = config.dataset.excitation.period > 0.0
                                  ? config.dataset.excitation.period
                                  : config.tf - config.t0;
        SchroederOptions sweep_opts;
        sweep_opts.dim = bounds.dim();
        sweep_opts.duration = config.tf - config.t0;
        const ControlSignal policy =
            schroeder_sweep(config.dataset.excitation.amplitude,
                            config.dataset.excitation.n_harmonics, period,
                            mix_seed(unit_seed, 1), sweep_opts);
        auto [trial0, cost0] = apply_policy(system, cost, bounds, config.x0, policy, config.t0,
                                            config.tf, config.dataset.obs_interval, config.sigma,
                                            mix_seed(unit_seed, 2));
        trial0.trial_index = 0;
        data.push_back(std::move(trial0));
        out.trial_costs[size_t(pi)](rep, 0) = cost0;

        for (int trial = 1; trial < trials; ++trial) {
          const std::uint64_t trial_seed = mix_seed(unit_seed, 100 + std::uint64_t(trial));
          const Ensemble ens = fit_ensemble(data, config.net, config.ensemble_size, config.train,
                                            trial_seed, 1);
          const ModelList models = ens.as_models();
          const MpcConfig mpc = config.make_mpc(planner);
          auto instance = make_planner(planner, models, cost, bounds, mpc,
                                       config.planner_settings, mix_seed(trial_seed, 3));
          const Plant plant{system, config.sigma};
          const MpcResult result = run_mpc(*instance, plant, cost, bounds, config.x0, config.t0,
                                           config.tf, mpc, mix_seed(trial_seed, 4));
          out.trial_costs[size_t(pi)](rep, trial) = result.realized_cost;
          data.push_back(observe_mpc_run(result, config.t0, config.tf,
                                         config.dataset.obs_interval, config.sigma,
                                         mix_seed(trial_seed, 5), trial));
          if (progress) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            (*progress) << "[online " << config.system << "] " << planner << " rep " << rep
                        << " trial " << trial << " cost=" << result.realized_cost << "\n";
          }
        }
      },
      config.threads);

  if (!config.output_dir.empty()) {
    namespace fs = std::filesystem;
    const std::string dir = output_path(config.output_dir);
    fs::create_directories(dir);
    std::ofstream csv(dir + "/" + config.system + "_online_costs.csv");
    csv << "planner,repetition";
    for (int t = 0; t < trials; ++t) csv << ",trial" << t;
    csv << "\n" << std::setprecision(17);
    for (size_t pi = 0; pi < planners.size(); ++pi)
      for (int rep = 0; rep < reps; ++rep) {
        csv << planners[pi] << "," << rep;
        for (int t = 0; t < trials; ++t) csv << "," << out.trial_costs[pi](rep, t);
        csv << "\n";
      }
  }
  return out;
}

std::vector<AggregateRow> aggregate_records(const std::vector<ResultRecord>& records) {
  std::vector<AggregateRow> rows;
  for (const auto& rec : records) {
    AggregateRow* row = nullptr;
    for (auto& r : rows)
      if (r.planner == rec.planner && r.model_kind == rec.model_kind) row = &r;
    if (!row) {
      rows.push_back({rec.planner, rec.model_kind, 0.0, 0.0, 0});
      row = &rows.back();
    }
    row->mean += rec.cost;
    row->stddev += rec.cost * rec.cost;
    row->count += 1;
  }
  for (auto& r : rows) {
    r.mean /= double(r.count);
    const double var = std::max(0.0, r.stddev / double(r.count) - r.mean * r.mean);
    r.stddev = std::sqrt(var * (r.count > 1 ? double(r.count) / double(r.count - 1) : 0.0));
  }
  return rows;
}

void write_record_json(const ResultRecord& record, const std::string& path) {
  json j;
  j["planner"] = record.planner;
  j["model_kind"] = record.model_kind;
  j["repetition"] = record.repetition;
  j["seed"] = record.seed;
  j["cost"] = record.cost;
  j["wall_time_s"] = record.wall_time_s;
  j["flagged_steps"] = record.flagged_steps;
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write record " + path);
  out << j.dump(2) << "\n";
}

ResultRecord read_record_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open record " + path);
  json j;
  in >> j;
  ResultRecord rec;
  rec.planner = j.at("planner").get<std::string>();
  rec.model_kind = j.at("model_kind").get<std::string>();
  rec.repetition = j.value("repetition", 0);
  rec.seed = j.value("seed", std::uint64_t(0));
  rec.cost = j.at("cost").get<double>();
  rec.wall_time_s = j.value("wall_time_s", 0.0);
  rec.flagged_steps = j.value("flagged_steps", 0);
  return rec;
}

std::vector<ResultRecord> read_records(const std::vector<std::string>& paths) {
  std::vector<ResultRecord> records;
  for (const auto& p : paths) records.push_back(read_record_json(p));
  return records;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "planner,model,mean,std,count\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.planner << "," << r.model_kind << "," << r.mean << "," << r.stddev << ","
        << r.count << "\n";
}

std::string output_path(const std::string& rel) {
  const char* root = std::getenv("PMPC_OUTPUT_ROOT");
  if (!root || rel.empty() || rel[0] == '/') return rel;
  return std::string(root) + "/" + rel;
}

}  // namespace pmpc
