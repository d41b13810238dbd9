#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/control_signal.hpp"
#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

/// One excitation trial: noisy state observations plus the applied control.
struct TrialDataset {
  VectorXd times;
  MatrixXd observations;  // d_x x T
  ControlSignal control;
  int trial_index = 0;

  int size() const { return int(times.size()); }
  int state_dim() const { return int(observations.rows()); }
};

struct SchroederExcitation {
  double amplitude = 1.0;
  int n_harmonics = 8;
  double period = -1.0;  // <= 0: trial length
};

struct DatasetConfig {
  int n_trials = 1;
  double trial_length = 10.0;
  double obs_interval = 0.05;
  SchroederExcitation excitation;
  MatrixXd init_state_box;  // d_x x 2, columns (lo, hi)
  double noise_sigma = 0.0;
  IntegratorConfig integrator = IntegratorConfig::oracle();
  int max_retries = 3;
};

/// Simulates the system under fresh Schroeder sweeps from uniformly sampled
/// initial states and adds i.i.d. Gaussian observation noise. Deterministic
/// per seed; trials whose simulation diverges are resampled with a new seed
/// offset (bounded retries).
std::vector<TrialDataset> generate_offline_dataset(const DynamicsModel& system,
                                                   const DatasetConfig& config,
                                                   std::uint64_t seed);

}  // namespace pmpc
