#include "pmpc/planners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmpc/mlp.hpp"
#include "pmpc/parallel.hpp"
#include "pmpc/rng.hpp"

namespace pmpc {

VectorXd uniform_knot_times(double t0, double tf, int n_knots) {
  if (n_knots < 2 || !(tf > t0)) throw UsageError("uniform_knot_times: bad grid");
  return VectorXd::LinSpaced(n_knots, t0, tf);
}

ControlSignal signal_from_knots(const VectorXd& knots, const VectorXd& knot_times, int d_u) {
  const int k = int(knot_times.size());
  if (knots.size() != k * d_u) throw UsageError("signal_from_knots: size mismatch");
  MatrixXd values(d_u, k);
  for (int j = 0; j < k; ++j) values.col(j) = knots.segment(j * d_u, d_u);
  return ControlSignal(knot_times, values);
}

double mean_cost_objective(const ModelList& models, const QuadraticCost& cost, const VectorXd& x0,
                           const VectorXd& knots, const VectorXd& knot_times,
                           const ControlBounds& bounds, const IntegratorConfig& integ) {
  if (models.empty()) throw UsageError("mean_cost_objective: empty model list");
  if (!knots.allFinite()) throw UsageError("mean_cost_objective: non-finite knots");
  const ControlSignal ctrl = signal_from_knots(knots, knot_times, bounds.dim());
  const double t0 = knot_times[0], tf = knot_times[knot_times.size() - 1];
  double total = 0.0;
  for (const auto& model : models)
    total += trajectory_cost(*model, cost, x0, ctrl, t0, tf, integ, nullptr, &bounds) /
             double(models.size());
  return total;
}

double adjoint_gradient(const ModelList& models, const QuadraticCost& cost, const VectorXd& x0,
                        const VectorXd& knots, const VectorXd& knot_times,
                        const ControlBounds& bounds, const IntegratorConfig& integ,
                        VectorXd& grad, int quad_per_interval) {
  if (models.empty()) throw UsageError("adjoint_gradient: empty model list");
  const int d_u = bounds.dim();
  const int k = int(knot_times.size());
  const int d = int(x0.size());
  const double t0 = knot_times[0], tf = knot_times[k - 1];
  const ControlSignal ctrl = signal_from_knots(knots, knot_times, d_u);

  // dense quadrature grid and spline basis (knots -> control samples)
  const int n_quad = (k - 1) * quad_per_interval + 1;
  const VectorXd tau = VectorXd::LinSpaced(n_quad, t0, tf);
  const MatrixXd basis = spline_basis_matrix(knot_times, tau);
  const double dt = (tf - t0) / double(n_quad - 1);

  // raw (pre-clamp) control at the quadrature points, and the clamp mask
  MatrixXd u_raw(d_u, n_quad), u_clamped(d_u, n_quad);
  MatrixXd active(d_u, n_quad);
  for (int q = 0; q < n_quad; ++q) {
    ctrl.eval_into(tau[q], u_raw.col(q));
    u_clamped.col(q) = bounds.clamp(u_raw.col(q));
    for (int c = 0; c < d_u; ++c)
      active(c, q) = (u_raw(c, q) > bounds.lo[c] && u_raw(c, q) < bounds.hi[c]) ? 1.0 : 0.0;
  }

  MatrixXd mean_gu = MatrixXd::Zero(d_u, n_quad);
  double mean_cost = 0.0;
  VectorXd u_buf(d_u);
  for (const auto& model : models) {
    // forward pass with the running-cost coordinate
    VectorXd z0(d + 1);
    z0 << x0, 0.0;
    auto fwd_rhs = [&](double t, const VectorXd& z, VectorXd& dz) {
      ctrl.eval_into(t, u_buf);
      bounds.clamp_in_place(u_buf);
      model->eval_f(z.head(d), u_buf, t, dz.head(d));
      dz[d] = cost.running(z.head(d), u_buf);
    };
    VectorXd t_end(1);
    t_end << tf;
    const Trajectory fwd = integrate_adaptive(fwd_rhs, z0, t0, tf, integ, &t_end);
    const VectorXd zf = fwd.back();
    mean_cost += (zf[d] + cost.terminal(zf.head(d))) / double(models.size());

    // backward pass of the pair (x, lambda) from the transversality condition
    VectorXd zb0(2 * d);
    zb0 << zf.head(d), cost.grad_terminal(zf.head(d));
    auto bwd_rhs = [&](double t, const VectorXd& z, VectorXd& dz) {
      ctrl.eval_into(t, u_buf);
      bounds.clamp_in_place(u_buf);
      const auto x = z.head(d);
      const auto lam = z.tail(d);
      model->eval_f(x, u_buf, t, dz.head(d));
      dz.tail(d) = -(cost.grad_x_running(x) + model->jac_x(x, u_buf, t).transpose() * lam);
    };
    VectorXd tau_rev(n_quad);
    for (int q = 0; q < n_quad; ++q) tau_rev[q] = tau[n_quad - 1 - q];
    const Trajectory bwd = integrate_adaptive(bwd_rhs, zb0, tf, t0, integ, &tau_rev);

    for (int q = 0; q < n_quad; ++q) {
      const int col = n_quad - 1 - q;  // bwd is stored tf -> t0
      const VectorXd x = bwd.states.col(col).head(d);
      const VectorXd lam = bwd.states.col(col).tail(d);
      mean_gu.col(q) += model->jac_u(x, u_clamped.col(q), tau[q]).transpose() * lam /
                        double(models.size());
    }
  }
  for (int q = 0; q < n_quad; ++q) {
    mean_gu.col(q) += cost.grad_u_running(u_clamped.col(q));
    mean_gu.col(q) = mean_gu.col(q).cwiseProduct(active.col(q));
  }

  // trapezoid projection onto the spline basis
  VectorXd weights = VectorXd::Constant(n_quad, dt);
  weights[0] = weights[n_quad - 1] = 0.5 * dt;
  grad.setZero(k * d_u);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < d_u; ++c) {
      double acc = 0.0;
      for (int q = 0; q < n_quad; ++q) acc += weights[q] * basis(q, j) * mean_gu(c, q);
      grad[j * d_u + c] = acc;
    }
  return mean_cost;
}

VectorXd colored_noise(int n, double beta, Rng& rng) {
  if (n == 1) {
    VectorXd v(1);
    v[0] = rng.normal();
    return v;
  }
  const int m_max = n / 2;
  VectorXd x = VectorXd::Zero(n);
  double var_sum = 0.0;
  // zero-frequency bin at the lowest nonzero frequency's amplitude, as in
  // the reference power-law noise generator
  x.array() += rng.normal();
  var_sum += 1.0;
  for (int m = 1; m <= m_max; ++m) {
    const double amp = std::pow(double(m), -0.5 * beta);
    const double a = rng.normal(), b = rng.normal();
    const double w = 2.0 * M_PI * double(m) / double(n);
    for (int j = 0; j < n; ++j) x[j] += amp * (a * std::cos(w * j) + b * std::sin(w * j));
    var_sum += amp * amp;
  }
  return x / std::sqrt(var_sum);
}

IcemResult icem_plan(const BatchObjective& objective, const ControlBounds& bounds, int n_knots,
                     const IcemConfig& config, std::uint64_t seed, const VectorXd* init_mean,
                     IcemWarmState* warm) {
  if (config.population < 4 || config.elite_frac <= 0.0 || config.elite_frac >= 1.0)
    throw UsageError("icem_plan: bad population/elite configuration");
  const int d_u = bounds.dim();
  const int n = n_knots * d_u;
  const int pop = config.population;
  const int n_elite = std::max(1, int(std::floor(config.elite_frac * pop)));
  Rng rng(seed);

  VectorXd range(n), lo(n), hi(n);
  for (int j = 0; j < n_knots; ++j)
    for (int c = 0; c < d_u; ++c) {
      lo[j * d_u + c] = bounds.lo[c];
      hi[j * d_u + c] = bounds.hi[c];
      range[j * d_u + c] = bounds.hi[c] - bounds.lo[c];
    }
  const double init_std = config.init_std > 0.0 ? config.init_std : -1.0;
  VectorXd std_vec = init_std > 0.0 ? VectorXd::Constant(n, init_std)
                                    : VectorXd(0.5 * range);
  const VectorXd min_std = config.min_std > 0.0 ? VectorXd::Constant(n, config.min_std)
                                                : VectorXd(0.01 * range);

  VectorXd mean;
  if (init_mean) {
    if (init_mean->size() != n) throw UsageError("icem_plan: init_mean size mismatch");
    mean = *init_mean;
  } else if (warm && warm->valid && warm->mean.size() == n) {
    mean = warm->mean;
  } else {
    mean = VectorXd::Zero(n);
  }
  mean = mean.cwiseMax(lo).cwiseMin(hi);

  VectorXd best_x;
  double best_cost = std::numeric_limits<double>::infinity();
  IcemResult result;
  result.best_cost_per_iteration.resize(config.iterations);

  MatrixXd pop_mat(n, pop);
  std::vector<int> order(static_cast<size_t>(pop));
  MatrixXd elites(n, n_elite);
  for (int it = 0; it < config.iterations; ++it) {
    // colored-noise samples around the current mean
    for (int p = 0; p < pop; ++p) {
      for (int c = 0; c < d_u; ++c) {
        const VectorXd noise = colored_noise(n_knots, config.noise_beta, rng);
        for (int j = 0; j < n_knots; ++j)
          pop_mat(j * d_u + c, p) = mean[j * d_u + c] + std_vec[j * d_u + c] * noise[j];
      }
    }
    int inject = 0;
    if (it == 0 && warm && warm->valid && config.shift_elites && warm->elites.rows() == n)
      for (int e = 0; e < warm->elites.cols() && inject < pop / 2; ++e)
        pop_mat.col(inject++) = warm->elites.col(e);
    if (std::isfinite(best_cost)) pop_mat.col(pop - 1) = best_x;  // best-so-far retention
    pop_mat = pop_mat.cwiseMax(lo.replicate(1, pop)).cwiseMin(hi.replicate(1, pop));

    const VectorXd costs = objective(pop_mat);
    if (costs.size() != pop) throw UsageError("icem_plan: objective returned wrong size");

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return costs[a] < costs[b]; });
    for (int e = 0; e < n_elite; ++e) elites.col(e) = pop_mat.col(order[size_t(e)]);
    if (costs[order[0]] < best_cost) {
      best_cost = costs[order[0]];
      best_x = elites.col(0);
    }
    result.best_cost_per_iteration[it] = best_cost;

    const VectorXd elite_mean = elites.rowwise().mean();
    VectorXd elite_std(n);
    for (int i = 0; i < n; ++i) {
      const double mu = elite_mean[i];
      double acc = 0.0;
      for (int e = 0; e < n_elite; ++e) acc += (elites(i, e) - mu) * (elites(i, e) - mu);
      elite_std[i] = std::sqrt(acc / double(n_elite));
    }
    mean = config.momentum * mean + (1.0 - config.momentum) * elite_mean;
    std_vec = config.momentum * std_vec + (1.0 - config.momentum) * elite_std;
    std_vec = std_vec.cwiseMax(min_std);
  }

  if (warm) {
    warm->mean = mean;
    warm->elites = elites;
    warm->valid = true;
  }
  result.knots = best_x;
  result.cost = best_cost;
  return result;
}

PlanResultKnots adam_plan(const ObjectiveWithGrad& fg, const ControlBounds& bounds, int n_knots,
                          const GradPlanConfig& config, const VectorXd& init) {
  const int d_u = bounds.dim();
  const int n = n_knots * d_u;
  if (init.size() != n) throw UsageError("adam_plan: init size mismatch");
  VectorXd lo(n), hi(n);
  for (int j = 0; j < n_knots; ++j)
    for (int c = 0; c < d_u; ++c) {
      lo[j * d_u + c] = bounds.lo[c];
      hi[j * d_u + c] = bounds.hi[c];
    }
  const double lr = config.learning_rate > 0.0
                        ? config.learning_rate
                        : 0.05 * (bounds.hi - bounds.lo).maxCoeff();

  VectorXd x = init.cwiseMax(lo).cwiseMin(hi);
  VectorXd g(n), m = VectorXd::Zero(n), v = VectorXd::Zero(n);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  VectorXd best_x = x;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= config.iterations; ++it) {
    const double cost = fg(x, g);
    if (cost < best_cost) {
      best_cost = cost;
      best_x = x;
    }
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, it);
    const double bc2 = 1.0 - std::pow(beta2, it);
    x.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    x = x.cwiseMax(lo).cwiseMin(hi);
  }
  VectorXd g_final(n);
  const double final_cost = fg(best_x, g_final);
  if (final_cost < best_cost) best_cost = final_cost;
  return {best_x, best_cost};
}

PlanResultKnots bfgs_plan(const ObjectiveWithGrad& fg, const ControlBounds& bounds, int n_knots,
                          const BfgsConfig& config, const VectorXd& init) {
  const int d_u = bounds.dim();
  const int n = n_knots * d_u;
  if (init.size() != n) throw UsageError("bfgs_plan: init size mismatch");
  VectorXd lo(n), hi(n);
  for (int j = 0; j < n_knots; ++j)
    for (int c = 0; c < d_u; ++c) {
      lo[j * d_u + c] = bounds.lo[c];
      hi[j * d_u + c] = bounds.hi[c];
    }
  auto clamp = [&](const VectorXd& v) { return v.cwiseMax(lo).cwiseMin(hi); };

  VectorXd x = clamp(init);
  VectorXd g(n), g_new(n);
  double f = fg(x, g);
  VectorXd best_x = x;
  double best_cost = f;
  MatrixXd h_inv = MatrixXd::Identity(n, n);
  bool first_update_ = true;

  for (int it = 0; it < config.iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= config.grad_tol) break;
    VectorXd dir = -(h_inv * g);
    if (dir.dot(g) >= 0.0) dir = -g;  // enforce descent

    double alpha = 1.0;
    bool accepted = false;
    VectorXd x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 30; ++ls) {
      x_new = clamp(x + alpha * dir);
      const VectorXd step = x_new - x;
      if (step.lpNorm<Eigen::Infinity>() < 1e-16) break;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + config.armijo_c * g.dot(step)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // steepest-descent fallback with a conservative step
      const double sd = 1e-2 / (1.0 + g.lpNorm<Eigen::Infinity>());
      x_new = clamp(x - sd * g);
      if ((x_new - x).lpNorm<Eigen::Infinity>() < 1e-16) break;
      f_new = fg(x_new, g_new);
      if (!std::isfinite(f_new) || f_new >= f) break;  // no progress possible
    }

    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > config.curvature_skip) {
      if (first_update_) {
        // Shanno-Phua scaling of the initial inverse Hessian
        h_inv = (sy / y.squaredNorm()) * MatrixXd::Identity(n, n);
        first_update_ = false;
      }
      const double rho = 1.0 / sy;
      const MatrixXd outer = MatrixXd::Identity(n, n) - rho * s * y.transpose();
      h_inv = outer * h_inv * outer.transpose() + rho * s * s.transpose();
    }
    x = x_new;
    f = f_new;
    g = g_new;
    if (f < best_cost) {
      best_cost = f;
      best_x = x;
    }
  }
  return {best_x, best_cost};
}

BatchRolloutCost::BatchRolloutCost(ModelList models, const QuadraticCost* cost, VectorXd x0,
                                   VectorXd knot_times, ControlBounds bounds,
                                   int substeps_per_knot, int threads)
    : models_(std::move(models)),
      cost_(cost),
      x0_(std::move(x0)),
      knot_times_(std::move(knot_times)),
      bounds_(std::move(bounds)),
      substeps_(std::max(1, substeps_per_knot)),
      threads_(threads) {
  const int n_steps = (int(knot_times_.size()) - 1) * substeps_;
  // stage grid at half-substep resolution: t, t+h/2, t+h for every substep
  stage_times_ = VectorXd::LinSpaced(2 * n_steps + 1, knot_times_[0],
                                     knot_times_[knot_times_.size() - 1]);
  stage_basis_ = spline_basis_matrix(knot_times_, stage_times_);
}

VectorXd BatchRolloutCost::operator()(const MatrixXd& candidates) const {
  const int n_cand = int(candidates.cols());
  const int d_u = bounds_.dim();
  const int k = n_knots();
  const int d = int(x0_.size());
  if (candidates.rows() != k * d_u) throw UsageError("BatchRolloutCost: candidate size mismatch");
  const int n_steps = (k - 1) * substeps_;
  const double h = (knot_times_[k - 1] - knot_times_[0]) / double(n_steps);

  // control samples for every candidate at every stage time (linear map)
  std::vector<MatrixXd> u_stage(static_cast<size_t>(d_u));  // per dim: n_stage x n_cand
  for (int c = 0; c < d_u; ++c) {
    MatrixXd knots_c(k, n_cand);
    for (int j = 0; j < k; ++j) knots_c.row(j) = candidates.row(j * d_u + c);
    u_stage[size_t(c)].noalias() = stage_basis_ * knots_c;
    u_stage[size_t(c)] = u_stage[size_t(c)].cwiseMax(bounds_.lo[c]).cwiseMin(bounds_.hi[c]);
  }

  VectorXd total = VectorXd::Zero(n_cand);
  std::vector<VectorXd> member_costs(models_.size());
  parallel_for(
      int(models_.size()),
      [&](int mi) {
        const DynamicsModel& model = *models_[size_t(mi)];
        const MlpModel* mlp = dynamic_cast<const MlpModel*>(&model);
        MatrixXd X = x0_.replicate(1, n_cand);
        VectorXd running = VectorXd::Zero(n_cand);
        MatrixXd Z(d + d_u, n_cand), K1, K2, K3, K4, Xs, E, QE, RU;
        VectorXd f_buf(d), x_buf(d), u_buf(d_u);

        auto eval_batch = [&](const MatrixXd& states, int stage_idx, MatrixXd& out) {
          Z.topRows(d) = states;
          for (int c = 0; c < d_u; ++c) Z.row(d + c) = u_stage[size_t(c)].row(stage_idx);
          if (mlp) {
            mlp_forward_batch(mlp->config(), mlp->params(), Z, out, nullptr);
          } else {
            out.resize(d, n_cand);
            const double t = stage_times_[stage_idx];
            for (int p = 0; p < n_cand; ++p) {
              x_buf = Z.col(p).head(d);
              u_buf = Z.col(p).tail(d_u);
              model.eval_f(x_buf, u_buf, t, f_buf);
              out.col(p) = f_buf;
            }
          }
        };
        // running cost of the states/controls of the last eval_batch call
        auto stage_running = [&](const MatrixXd& states, VectorXd& out) {
          E = states.colwise() - cost_->x_star();
          QE.noalias() = cost_->Q() * E;
          RU.noalias() = cost_->R() * Z.bottomRows(d_u);
          out = ((E.array() * QE.array()).colwise().sum() +
                 (Z.bottomRows(d_u).array() * RU.array()).colwise().sum())
                    .transpose();
        };

        VectorXd l1(n_cand), l2(n_cand), l3(n_cand), l4(n_cand);
        for (int step = 0; step < n_steps; ++step) {
          const int s0 = 2 * step, s1 = 2 * step + 1, s2 = 2 * step + 2;
          eval_batch(X, s0, K1);
          stage_running(X, l1);
          Xs = X + 0.5 * h * K1;
          eval_batch(Xs, s1, K2);
          stage_running(Xs, l2);
          Xs = X + 0.5 * h * K2;
          eval_batch(Xs, s1, K3);
          stage_running(Xs, l3);
          Xs = X + h * K3;
          eval_batch(Xs, s2, K4);
          stage_running(Xs, l4);
          X += (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
          running += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        }
        VectorXd costs(n_cand);
        for (int p = 0; p < n_cand; ++p) {
          const double terminal = cost_->terminal(X.col(p));
          const double c = running[p] + terminal;
          costs[p] = std::isfinite(c) ? c : 1e30;
        }
        member_costs[size_t(mi)] = std::move(costs);
      },
      threads_);
  for (const auto& mc : member_costs) total += mc / double(models_.size());
  return total;
}

}  // namespace pmpc
