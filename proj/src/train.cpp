#include "pmpc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmpc/parallel.hpp"
#include "pmpc/rng.hpp"

namespace pmpc {

namespace {

/// Precomputed rollout structure: uniform observation grid, control values
/// sampled at half-substep resolution, and the list of rollout start points.
struct RolloutPlan {
  int d_x = 0, d_u = 0;
  int rollout_len = 1, n_sub = 1;
  double h = 0.0;
  struct Start {
    int trial, obs;
  };
  std::vector<Start> starts;
  std::vector<const TrialDataset*> trials;
  std::vector<MatrixXd> u_grid;  // per trial, d_u x (2*n_sub*(T-1)+1)
};

RolloutPlan build_plan(const std::vector<TrialDataset>& datasets, int rollout_len,
                       double substep_h) {
  if (datasets.empty()) throw UsageError("training: empty dataset list");
  if (rollout_len < 1) throw UsageError("training: rollout_len must be >= 1");

  RolloutPlan plan;
  plan.d_x = datasets[0].state_dim();
  plan.d_u = datasets[0].control.dim();
  plan.rollout_len = rollout_len;

  double obs_interval = 0.0;
  for (const auto& trial : datasets) {
    if (trial.size() < 2) continue;
    const double dt = trial.times[1] - trial.times[0];
    if (obs_interval == 0.0) obs_interval = dt;
    for (int i = 0; i + 1 < trial.size(); ++i)
      if (std::abs(trial.times[i + 1] - trial.times[i] - obs_interval) > 1e-9 * obs_interval)
        throw UsageError("training: observation times must be uniformly spaced");
  }
  if (obs_interval == 0.0) throw UsageError("training: trials too short");

  const double want_h = substep_h > 0.0 ? substep_h : obs_interval / 5.0;
  plan.n_sub = std::max(1, int(std::llround(obs_interval / want_h)));
  plan.h = obs_interval / double(plan.n_sub);

  for (const auto& trial : datasets) {
    const int idx = int(plan.trials.size());
    plan.trials.push_back(&trial);
    const int t_obs = trial.size();
    const int n_grid = 2 * plan.n_sub * (t_obs - 1) + 1;
    MatrixXd grid(plan.d_u, n_grid);
    VectorXd u(plan.d_u);
    for (int j = 0; j < n_grid; ++j) {
      trial.control.eval_into(trial.times[0] + 0.5 * plan.h * double(j), u);
      grid.col(j) = u;
    }
    plan.u_grid.push_back(std::move(grid));
    for (int obs = 0; obs + rollout_len < t_obs; ++obs)
      plan.starts.push_back({idx, obs});
  }
  if (plan.starts.empty()) throw UsageError("training: no rollout start points");
  return plan;
}

struct BatchWork {
  MatrixXd X, Z, K1, K2, K3, K4, stage_x, E;
  std::vector<MlpBatchCache> caches;      // 4 per substep
  std::vector<MatrixXd> checkpoints_err;  // per rollout step
  std::vector<MatrixXd> xbar_tmp;
};

BatchWork& tls_batch_work() {
  static thread_local BatchWork work;
  return work;
}

/// Forward (and optionally backward) pass over one minibatch of rollouts.
/// Loss: mean over (sample, rollout step) of the squared prediction error.
double batch_rollouts(const RolloutPlan& plan, const NetConfig& config, const VectorXd& theta,
                      const std::vector<int>& batch, VectorXd* grad) {
  const int b = int(batch.size());
  const int d_x = plan.d_x, d_u = plan.d_u;
  const int q_total = plan.rollout_len * plan.n_sub;
  const double h = plan.h;
  BatchWork& w = tls_batch_work();

  w.X.resize(d_x, b);
  for (int c = 0; c < b; ++c) {
    const auto& st = plan.starts[size_t(batch[size_t(c)])];
    w.X.col(c) = plan.trials[size_t(st.trial)]->observations.col(st.obs);
  }
  w.Z.resize(d_x + d_u, b);
  if (grad) w.caches.resize(size_t(4 * q_total));
  w.checkpoints_err.resize(size_t(plan.rollout_len));

  double loss = 0.0;
  const double scale = 1.0 / double(b * plan.rollout_len);

  auto gather_controls = [&](int q, int half_offset) {
    // control columns at rollout substep q, stage offset 0/1/2 half-steps
    for (int c = 0; c < b; ++c) {
      const auto& st = plan.starts[size_t(batch[size_t(c)])];
      const int base = 2 * (st.obs * plan.n_sub + q) + half_offset;
      w.Z.col(c).tail(d_u) = plan.u_grid[size_t(st.trial)].col(base);
    }
  };

  MatrixXd out;
  for (int q = 0; q < q_total; ++q) {
    MlpBatchCache* c1 = grad ? &w.caches[size_t(4 * q + 0)] : nullptr;
    MlpBatchCache* c2 = grad ? &w.caches[size_t(4 * q + 1)] : nullptr;
    MlpBatchCache* c3 = grad ? &w.caches[size_t(4 * q + 2)] : nullptr;
    MlpBatchCache* c4 = grad ? &w.caches[size_t(4 * q + 3)] : nullptr;

    w.Z.topRows(d_x) = w.X;
    gather_controls(q, 0);
    mlp_forward_batch(config, theta, w.Z, w.K1, c1);

    w.Z.topRows(d_x) = w.X + 0.5 * h * w.K1;
    gather_controls(q, 1);
    mlp_forward_batch(config, theta, w.Z, w.K2, c2);

    w.Z.topRows(d_x) = w.X + 0.5 * h * w.K2;
    gather_controls(q, 1);
    mlp_forward_batch(config, theta, w.Z, w.K3, c3);

    w.Z.topRows(d_x) = w.X + h * w.K3;
    gather_controls(q, 2);
    mlp_forward_batch(config, theta, w.Z, w.K4, c4);

    w.X += (h / 6.0) * (w.K1 + 2.0 * w.K2 + 2.0 * w.K3 + w.K4);

    if ((q + 1) % plan.n_sub == 0) {
      const int r = (q + 1) / plan.n_sub;
      MatrixXd& err = w.checkpoints_err[size_t(r - 1)];
      err.resize(d_x, b);
      for (int c = 0; c < b; ++c) {
        const auto& st = plan.starts[size_t(batch[size_t(c)])];
        err.col(c) = w.X.col(c) - plan.trials[size_t(st.trial)]->observations.col(st.obs + r);
      }
      loss += scale * err.squaredNorm();
    }
  }
  if (!grad) return loss;

  // reverse pass through the RK4 substeps
  MatrixXd xbar = MatrixXd::Zero(d_x, b);
  MatrixXd k1b, k2b, k3b, k4b, input_bar, zeros_du = MatrixXd::Zero(d_u, b);
  for (int q = q_total - 1; q >= 0; --q) {
    if ((q + 1) % plan.n_sub == 0) {
      const int r = (q + 1) / plan.n_sub;
      xbar += 2.0 * scale * w.checkpoints_err[size_t(r - 1)];
    }
    k1b = (h / 6.0) * xbar;
    k2b = (h / 3.0) * xbar;
    k3b = (h / 3.0) * xbar;
    k4b = (h / 6.0) * xbar;

    mlp_backward_batch(config, theta, w.caches[size_t(4 * q + 3)], k4b, *grad, &input_bar);
    xbar += input_bar.topRows(d_x);
    k3b += h * input_bar.topRows(d_x);

    mlp_backward_batch(config, theta, w.caches[size_t(4 * q + 2)], k3b, *grad, &input_bar);
    xbar += input_bar.topRows(d_x);
    k2b += 0.5 * h * input_bar.topRows(d_x);

    mlp_backward_batch(config, theta, w.caches[size_t(4 * q + 1)], k2b, *grad, &input_bar);
    xbar += input_bar.topRows(d_x);
    k1b += 0.5 * h * input_bar.topRows(d_x);

    mlp_backward_batch(config, theta, w.caches[size_t(4 * q + 0)], k1b, *grad, &input_bar);
    xbar += input_bar.topRows(d_x);
  }
  return loss;
}

double dataset_loss(const RolloutPlan& plan, const NetConfig& config, const VectorXd& theta,
                    const std::vector<int>& indices, int chunk = 512) {
  double total = 0.0;
  int count = 0;
  for (size_t pos = 0; pos < indices.size(); pos += size_t(chunk)) {
    std::vector<int> part(indices.begin() + long(pos),
                          indices.begin() + long(std::min(indices.size(), pos + size_t(chunk))));
    total += batch_rollouts(plan, config, theta, part, nullptr) * double(part.size());
    count += int(part.size());
  }
  return count > 0 ? total / double(count) : 0.0;
}

struct AdamState {
  VectorXd m, v;
  int t = 0;
  void reset(int n) {
    m = VectorXd::Zero(n);
    v = VectorXd::Zero(n);
    t = 0;
  }
  void step(VectorXd& theta, const VectorXd& grad, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
};

VectorXd train_member(const RolloutPlan& plan, const NetConfig& config, const TrainConfig& tc,
                      std::uint64_t seed, TrainCurve* curve) {
  const int n_starts = int(plan.starts.size());
  Rng rng(mix_seed(seed, 0x7724));
  std::vector<int> order(static_cast<size_t>(n_starts));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n_starts - 1; i > 0; --i) std::swap(order[size_t(i)], order[size_t(rng.uniform_int(i + 1))]);

  const int n_val = std::min(n_starts - 1, int(std::llround(tc.val_fraction * n_starts)));
  std::vector<int> val_idx(order.end() - n_val, order.end());
  std::vector<int> train_idx(order.begin(), order.end() - n_val);

  for (int retry = 0; retry <= tc.max_retries; ++retry) {
    const double lr = tc.learning_rate / std::pow(2.0, retry);
    VectorXd theta = init_params(config, seed);
    AdamState adam;
    adam.reset(int(theta.size()));
    VectorXd grad(theta.size());

    if (curve && retry == 0) curve->initial_loss = dataset_loss(plan, config, theta, train_idx);

    VectorXd best_theta = theta;
    double best_val = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    bool failed = false;
    int epochs_run = 0;
    if (curve) curve->val_losses.clear();

    Rng epoch_rng(mix_seed(seed, 0x55AA));
    std::vector<int> shuffled = train_idx;
    for (int epoch = 0; epoch < tc.epochs && !failed; ++epoch) {
      epochs_run = epoch + 1;
      for (int i = int(shuffled.size()) - 1; i > 0; --i)
        std::swap(shuffled[size_t(i)], shuffled[size_t(epoch_rng.uniform_int(i + 1))]);

      for (size_t pos = 0; pos < shuffled.size() && !failed; pos += size_t(tc.batch_size)) {
        std::vector<int> batch(shuffled.begin() + long(pos),
                               shuffled.begin() +
                                   long(std::min(shuffled.size(), pos + size_t(tc.batch_size))));
        grad.setZero();
        const double loss = batch_rollouts(plan, config, theta, batch, &grad);
        if (!std::isfinite(loss)) {
          failed = true;
          break;
        }
        if (tc.weight_decay > 0.0) grad += tc.weight_decay * theta;
        adam.step(theta, grad, lr);
      }
      if (failed) break;

      const double val = val_idx.empty() ? dataset_loss(plan, config, theta, train_idx)
                                         : dataset_loss(plan, config, theta, val_idx);
      if (!std::isfinite(val)) {
        failed = true;
        break;
      }
      if (curve) curve->val_losses.push_back(val);
      if (val < best_val) {
        best_val = val;
        best_theta = theta;
        bad_epochs = 0;
      } else if (++bad_epochs >= tc.patience) {
        break;
      }
    }
    if (!failed) {
      if (curve) {
        curve->final_loss = dataset_loss(plan, config, best_theta, train_idx);
        curve->best_val = best_val;
        curve->epochs_run = epochs_run;
      }
      return best_theta;
    }
  }
  throw NumericalError("fit_ensemble: training kept producing non-finite losses after retries");
}

}  // namespace

Ensemble fit_ensemble(const std::vector<TrialDataset>& datasets, const NetConfig& net_config,
                      int members, const TrainConfig& train_config, std::uint64_t seed,
                      int threads, std::vector<TrainCurve>* curves) {
  if (members < 1) throw UsageError("fit_ensemble: need members >= 1");
  const RolloutPlan plan = build_plan(datasets, train_config.rollout_len, train_config.substep_h);
  if (plan.d_x != net_config.output_dim() || plan.d_x + plan.d_u != net_config.input_dim())
    throw UsageError("fit_ensemble: net dimensions do not match the data");

  Ensemble ensemble;
  ensemble.config = net_config;
  ensemble.members.assign(size_t(members), VectorXd());
  if (curves) curves->assign(size_t(members), TrainCurve{});
  parallel_for(
      members,
      [&](int i) {
        TrainCurve* curve = curves ? &(*curves)[size_t(i)] : nullptr;
        ensemble.members[size_t(i)] =
            train_member(plan, net_config, train_config, seed + std::uint64_t(i), curve);
      },
      threads);
  return ensemble;
}

double one_step_loss(const NetConfig& config, const VectorXd& theta, const TrialDataset& trial,
                     double h) {
  std::vector<TrialDataset> one = {trial};
  const RolloutPlan plan = build_plan(one, 1, h);
  std::vector<int> all(plan.starts.size());
  std::iota(all.begin(), all.end(), 0);
  return batch_rollouts(plan, config, theta, all, nullptr);
}

double rollout_mse(const NetConfig& config, const VectorXd& theta,
                   const std::vector<TrialDataset>& datasets, int rollout_len, double h) {
  const RolloutPlan plan = build_plan(datasets, rollout_len, h);
  std::vector<int> all(plan.starts.size());
  std::iota(all.begin(), all.end(), 0);
  double total = 0.0;
  for (size_t pos = 0; pos < all.size(); pos += 512) {
    std::vector<int> part(all.begin() + long(pos),
                          all.begin() + long(std::min(all.size(), pos + 512)));
    total += batch_rollouts(plan, config, theta, part, nullptr) * double(part.size());
  }
  return total / double(all.size());
}

}  // namespace pmpc
