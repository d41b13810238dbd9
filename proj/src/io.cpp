#include "pmpc/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace pmpc {

using nlohmann::json;

namespace {

std::string trial_path(const std::string& prefix, int k) {
  std::ostringstream name;
  name << prefix << "_trial" << std::setfill('0') << std::setw(3) << k << ".csv";
  return name.str();
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void dump_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

void save_ensemble(const Ensemble& ensemble, const std::string& prefix, std::uint64_t seed) {
  std::ofstream out(prefix + "_params.csv");
  if (!out) throw UsageError("save_ensemble: cannot open " + prefix + "_params.csv");
  out << std::setprecision(17);
  for (const auto& theta : ensemble.members) {
    for (int i = 0; i < theta.size(); ++i) out << (i ? "," : "") << theta[i];
    out << "\n";
  }
  json manifest;
  manifest["layer_sizes"] = ensemble.config.layer_sizes;
  manifest["activation"] = to_string(ensemble.config.activation);
  manifest["output_bias"] = ensemble.config.output_bias;
  manifest["members"] = ensemble.size();
  manifest["seed"] = seed;
  dump_json(manifest, prefix + "_manifest.json");
}

Ensemble load_ensemble(const std::string& prefix) {
  const json manifest = load_json(prefix + "_manifest.json");
  Ensemble ensemble;
  ensemble.config.layer_sizes = manifest.at("layer_sizes").get<std::vector<int>>();
  ensemble.config.activation = activation_from_string(manifest.at("activation").get<std::string>());
  ensemble.config.output_bias = manifest.value("output_bias", false);
  const int expected = count_params(ensemble.config);

  std::ifstream in(prefix + "_params.csv");
  if (!in) throw UsageError("load_ensemble: cannot open " + prefix + "_params.csv");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (int(vals.size()) != expected)
      throw UsageError("load_ensemble: parameter count mismatch in " + prefix);
    ensemble.members.push_back(Eigen::Map<VectorXd>(vals.data(), long(vals.size())));
  }
  if (ensemble.members.empty()) throw UsageError("load_ensemble: no members in " + prefix);
  return ensemble;
}

void save_datasets(const std::vector<TrialDataset>& trials, const std::string& prefix,
                   const std::string& system_name, double noise_sigma, std::uint64_t seed) {
  for (size_t k = 0; k < trials.size(); ++k) {
    const TrialDataset& trial = trials[k];
    std::ofstream out(trial_path(prefix, int(k)));
    if (!out) throw UsageError("save_datasets: cannot open trial file");
    const int d = trial.state_dim();
    const int d_u = trial.control.dim();
    out << "t";
    for (int i = 1; i <= d; ++i) out << ",y" << i;
    for (int i = 1; i <= d_u; ++i) out << ",u" << i;
    out << "\n" << std::setprecision(17);
    VectorXd u(d_u);
    for (int j = 0; j < trial.size(); ++j) {
      out << trial.times[j];
      for (int i = 0; i < d; ++i) out << "," << trial.observations(i, j);
      trial.control.eval_into(trial.times[j], u);
      for (int i = 0; i < d_u; ++i) out << "," << u[i];
      out << "\n";
    }
  }
  json manifest;
  manifest["system"] = system_name;
  manifest["noise_sigma"] = noise_sigma;
  manifest["seed"] = seed;
  manifest["n_trials"] = trials.size();
  manifest["state_dim"] = trials.empty() ? 0 : trials[0].state_dim();
  manifest["control_dim"] = trials.empty() ? 0 : trials[0].control.dim();
  dump_json(manifest, prefix + "_manifest.json");
}

std::vector<TrialDataset> load_datasets(const std::string& prefix) {
  const json manifest = load_json(prefix + "_manifest.json");
  const int n_trials = manifest.at("n_trials").get<int>();
  const int d = manifest.at("state_dim").get<int>();
  const int d_u = manifest.at("control_dim").get<int>();

  std::vector<TrialDataset> trials;
  for (int k = 0; k < n_trials; ++k) {
    std::ifstream in(trial_path(prefix, k));
    if (!in) throw UsageError("load_datasets: cannot open trial file " + trial_path(prefix, k));
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      if (int(row.size()) != 1 + d + d_u)
        throw UsageError("load_datasets: column count mismatch");
      rows.push_back(std::move(row));
    }
    TrialDataset trial;
    const int n = int(rows.size());
    trial.times.resize(n);
    trial.observations.resize(d, n);
    MatrixXd u_values(d_u, n);
    for (int j = 0; j < n; ++j) {
      trial.times[j] = rows[size_t(j)][0];
      for (int i = 0; i < d; ++i) trial.observations(i, j) = rows[size_t(j)][size_t(1 + i)];
      for (int i = 0; i < d_u; ++i) u_values(i, j) = rows[size_t(j)][size_t(1 + d + i)];
    }
    trial.control = ControlSignal(trial.times, u_values);
    trial.trial_index = k;
    trials.push_back(std::move(trial));
  }
  return trials;
}

}  // namespace pmpc
