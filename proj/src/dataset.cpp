#include "pmpc/dataset.hpp"

#include <cmath>

#include "pmpc/rng.hpp"

namespace pmpc {

std::vector<TrialDataset> generate_offline_dataset(const DynamicsModel& system,
                                                   const DatasetConfig& config,
                                                   std::uint64_t seed) {
  if (config.n_trials < 1) throw UsageError("generate_offline_dataset: need n_trials >= 1");
  if (!(config.noise_sigma >= 0.0)) throw UsageError("generate_offline_dataset: noise_sigma < 0");
  const int d_x = system.state_dim();
  const int d_u = system.control_dim();
  if (config.init_state_box.rows() != d_x || config.init_state_box.cols() != 2)
    throw UsageError("generate_offline_dataset: init_state_box must be d_x x 2");

  const double period = config.excitation.period > 0.0 ? config.excitation.period
                                                       : config.trial_length;
  const int n_obs = int(std::llround(config.trial_length / config.obs_interval)) + 1;
  VectorXd obs_times = VectorXd::LinSpaced(n_obs, 0.0, config.trial_length);

  std::vector<TrialDataset> trials;
  trials.reserve(size_t(config.n_trials));
  for (int trial = 0; trial < config.n_trials; ++trial) {
    bool done = false;
    for (int retry = 0; retry <= config.max_retries && !done; ++retry) {
      const std::uint64_t trial_seed = mix_seed(seed, std::uint64_t(trial) * 1000 + retry);
      Rng rng(trial_seed);
      VectorXd x0(d_x);
      for (int i = 0; i < d_x; ++i)
        x0[i] = rng.uniform(config.init_state_box(i, 0), config.init_state_box(i, 1));

      SchroederOptions sweep_opts;
      sweep_opts.dim = d_u;
      sweep_opts.duration = config.trial_length;
      ControlSignal sweep = schroeder_sweep(config.excitation.amplitude,
                                            config.excitation.n_harmonics, period,
                                            mix_seed(trial_seed, 0xABCD), sweep_opts);

      VectorXd u(d_u);
      auto rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
        sweep.eval_into(t, u);
        system.eval_f(x, u, t, dx);
      };
      try {
        Trajectory traj = integrate_adaptive(rhs, x0, 0.0, config.trial_length,
                                             config.integrator, &obs_times);
        TrialDataset data;
        data.times = traj.times;
        data.observations = traj.states;
        if (config.noise_sigma > 0.0)
          for (int j = 0; j < data.observations.cols(); ++j)
            for (int i = 0; i < d_x; ++i)
              data.observations(i, j) += config.noise_sigma * rng.normal();
        data.control = std::move(sweep);
        data.trial_index = trial;
        trials.push_back(std::move(data));
        done = true;
      } catch (const NumericalError&) {
        if (retry == config.max_retries)
          throw NumericalError("generate_offline_dataset: trial " + std::to_string(trial) +
                               " kept diverging after retries");
      }
    }
  }
  return trials;
}

}  // namespace pmpc
