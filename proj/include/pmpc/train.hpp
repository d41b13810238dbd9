#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/dataset.hpp"
#include "pmpc/mlp.hpp"

namespace pmpc {

struct TrainConfig {
  int epochs = 2000;
  double learning_rate = 1e-3;
  int rollout_len = 5;    // observation intervals per training rollout
  int batch_size = 128;   // rollouts per gradient step
  double substep_h = 0.0; // RK4 substep; <= 0 picks obs_interval / 5
  double weight_decay = 0.0;
  double val_fraction = 0.1;
  int patience = 50;      // early-stopping epochs without val improvement
  int max_retries = 3;    // learning-rate halving restarts on non-finite loss
};

struct TrainCurve {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double best_val = 0.0;
  int epochs_run = 0;
  std::vector<double> val_losses;
};

/// Trains M members independently (seeds seed+i) by minimizing the mean
/// squared error of rollout_len-step fixed-RK4 rollouts, started from the
/// observed states under the recorded control, against the observed next
/// states. Adaptive-moment SGD with early stopping on a validation split.
Ensemble fit_ensemble(const std::vector<TrialDataset>& datasets, const NetConfig& net_config,
                      int members, const TrainConfig& train_config, std::uint64_t seed,
                      int threads = 1, std::vector<TrainCurve>* curves = nullptr);

/// Mean squared single-step prediction error of one member on one trial
/// (RK4 substeps of size h across each observation interval).
double one_step_loss(const NetConfig& config, const VectorXd& theta, const TrialDataset& trial,
                     double h);

/// Mean squared rollout_len-step prediction error over all trials
/// (diagnostic; theta = 0 gives the zero-dynamics baseline).
double rollout_mse(const NetConfig& config, const VectorXd& theta,
                   const std::vector<TrialDataset>& datasets, int rollout_len, double h);

}  // namespace pmpc
