#include "pmpc/mpc.hpp"

#include <chrono>
#include <cmath>

#include "pmpc/rng.hpp"

namespace pmpc {

namespace {

int knots_for_window(double t0, double tf, double dt) {
  return std::max(1, int(std::llround((tf - t0) / dt))) + 1;
}

class PmpMeanHPlanner : public StepPlanner {
public:
  PmpMeanHPlanner(ModelList models, QuadraticCost cost, ControlBounds bounds, MpcConfig mpc,
                  PlannerSettings settings)
      : models_(std::move(models)),
        cost_(std::move(cost)),
        bounds_(std::move(bounds)),
        mpc_(std::move(mpc)),
        settings_(std::move(settings)) {}

  ControlSignal plan(const VectorXd& x, double t, double t_end, int iterations) override {
    ShootingProblem problem(models_, cost_, bounds_, x);
    problem.t0 = t;
    problem.tf = t_end;
    problem.segments = settings_.segments;
    problem.control_dt = mpc_.dt;
    problem.integrator = settings_.plan_integrator;
    problem.solver = settings_.solver;
    problem.solver.max_iterations = iterations;
    problem.argmin = settings_.argmin;
    problem.replay_cost = false;

    const ShootingVars* init = nullptr;
    ShootingVars guess;
    if (warm_valid_ && mpc_.warm_start) {
      // costates sampled from the previous solution's trajectories beat the
      // plain block shift when the solution is available
      if (!warm_trajs_.empty()) {
        guess = vars_from_trajectories(warm_trajs_, problem);
      } else {
        guess = warm_start_shift(warm_, t - warm_t_, problem);
      }
      init = &guess;
    }
    SolveResult result = solve_mean_h(problem, init);
    warm_ = result.vars;
    warm_trajs_ = result.member_trajectories;
    warm_t_ = t;
    warm_valid_ = true;
    residual_ = result.report.residual_norm;
    return std::move(result.control);
  }

  void reset() override {
    warm_valid_ = false;
    warm_trajs_.clear();
  }
  double last_residual() const override { return residual_; }

private:
  ModelList models_;
  QuadraticCost cost_;
  ControlBounds bounds_;
  MpcConfig mpc_;
  PlannerSettings settings_;
  ShootingVars warm_;
  std::vector<Trajectory> warm_trajs_;
  double warm_t_ = 0.0;
  bool warm_valid_ = false;
  double residual_ = std::numeric_limits<double>::quiet_NaN();
};

class PmpMeanUPlanner : public StepPlanner {
public:
  PmpMeanUPlanner(ModelList models, QuadraticCost cost, ControlBounds bounds, MpcConfig mpc,
                  PlannerSettings settings)
      : models_(std::move(models)),
        cost_(std::move(cost)),
        bounds_(std::move(bounds)),
        mpc_(std::move(mpc)),
        settings_(std::move(settings)) {}

  ControlSignal plan(const VectorXd& x, double t, double t_end, int iterations) override {
    ShootingProblem problem(models_, cost_, bounds_, x);
    problem.t0 = t;
    problem.tf = t_end;
    problem.segments = settings_.segments;
    problem.control_dt = mpc_.dt;
    problem.integrator = settings_.plan_integrator;
    problem.solver = settings_.solver;
    problem.solver.max_iterations = iterations;
    problem.solver.threads = settings_.threads;
    problem.argmin = settings_.argmin;
    problem.replay_cost = false;

    std::vector<ShootingVars> guesses;
    const std::vector<ShootingVars>* init = nullptr;
    if (warm_valid_ && mpc_.warm_start) {
      guesses.reserve(warm_.size());
      for (size_t i = 0; i < warm_.size(); ++i) {
        if (i < warm_trajs_.size() && warm_trajs_[i].size() > 1) {
          ShootingProblem single = problem;
          single.models = {models_[i]};
          guesses.push_back(vars_from_trajectories({warm_trajs_[i]}, single));
        } else {
          guesses.push_back(warm_start_shift(warm_[i], t - warm_t_, problem));
        }
      }
      init = &guesses;
    }
    SolveResult result = solve_mean_u(problem, init, &warm_);
    warm_trajs_ = result.member_trajectories;
    warm_t_ = t;
    warm_valid_ = true;
    residual_ = result.report.residual_norm;
    return std::move(result.control);
  }

  void reset() override {
    warm_valid_ = false;
    warm_trajs_.clear();
  }
  double last_residual() const override { return residual_; }

private:
  ModelList models_;
  QuadraticCost cost_;
  ControlBounds bounds_;
  MpcConfig mpc_;
  PlannerSettings settings_;
  std::vector<ShootingVars> warm_;
  std::vector<Trajectory> warm_trajs_;
  double warm_t_ = 0.0;
  bool warm_valid_ = false;
  double residual_ = std::numeric_limits<double>::quiet_NaN();
};

/// Shift a flat knot vector left by `slots` knots, repeating the last knot.
VectorXd shift_knots(const VectorXd& flat, int slots, int d_u, int n_new) {
  const int n_old = int(flat.size()) / d_u;
  VectorXd out(n_new * d_u);
  for (int j = 0; j < n_new; ++j) {
    const int src = std::min(n_old - 1, j + slots);
    out.segment(j * d_u, d_u) = flat.segment(src * d_u, d_u);
  }
  return out;
}

class IcemPlanner : public StepPlanner {
public:
  IcemPlanner(ModelList models, QuadraticCost cost, ControlBounds bounds, MpcConfig mpc,
              PlannerSettings settings, std::uint64_t seed)
      : models_(std::move(models)),
        cost_(std::move(cost)),
        bounds_(std::move(bounds)),
        mpc_(std::move(mpc)),
        settings_(std::move(settings)),
        seed_(seed) {}

  ControlSignal plan(const VectorXd& x, double t, double t_end, int iterations) override {
    const int n_knots = knots_for_window(t, t_end, mpc_.dt);
    const VectorXd grid = uniform_knot_times(t, t_end, n_knots);
    const int d_u = bounds_.dim();

    if (warm_.valid && mpc_.warm_start) {
      const int slots = std::max(0, int(std::llround((t - warm_t_) / mpc_.dt)));
      warm_.mean = shift_knots(warm_.mean, slots, d_u, n_knots);
      MatrixXd elites(n_knots * d_u, warm_.elites.cols());
      for (int e = 0; e < warm_.elites.cols(); ++e)
        elites.col(e) = shift_knots(warm_.elites.col(e), slots, d_u, n_knots);
      warm_.elites = std::move(elites);
    } else {
      warm_.valid = false;
    }

    IcemConfig cfg = settings_.icem;
    cfg.iterations = iterations;
    BatchObjective objective;
    BatchRolloutCost fast(models_, &cost_, x, grid, bounds_, settings_.rollout_substeps,
                          settings_.threads);
    if (settings_.icem_exact_objective) {
      objective = [&](const MatrixXd& cand) {
        VectorXd costs(cand.cols());
        for (int p = 0; p < cand.cols(); ++p)
          costs[p] = mean_cost_objective(models_, cost_, x, cand.col(p), grid, bounds_,
                                         settings_.plan_integrator);
        return costs;
      };
    } else {
      objective = [&](const MatrixXd& cand) { return fast(cand); };
    }

    IcemResult result = icem_plan(objective, bounds_, n_knots, cfg,
                                  mix_seed(seed_, std::uint64_t(step_counter_++)), nullptr,
                                  mpc_.warm_start ? &warm_ : nullptr);
    warm_t_ = t;
    ControlSignal signal = signal_from_knots(result.knots, grid, d_u);
    // clamp the stored knots (samples are clamped inside icem_plan already)
    return signal;
  }

  void reset() override {
    warm_.valid = false;
    step_counter_ = 0;
  }

private:
  ModelList models_;
  QuadraticCost cost_;
  ControlBounds bounds_;
  MpcConfig mpc_;
  PlannerSettings settings_;
  std::uint64_t seed_;
  IcemWarmState warm_;
  double warm_t_ = 0.0;
  int step_counter_ = 0;
};

class GradientPlanner : public StepPlanner {
public:
  GradientPlanner(bool bfgs, ModelList models, QuadraticCost cost, ControlBounds bounds,
                  MpcConfig mpc, PlannerSettings settings)
      : bfgs_(bfgs),
        models_(std::move(models)),
        cost_(std::move(cost)),
        bounds_(std::move(bounds)),
        mpc_(std::move(mpc)),
        settings_(std::move(settings)) {}

  ControlSignal plan(const VectorXd& x, double t, double t_end, int iterations) override {
    const int n_knots = knots_for_window(t, t_end, mpc_.dt);
    const VectorXd grid = uniform_knot_times(t, t_end, n_knots);
    const int d_u = bounds_.dim();

    VectorXd init;
    if (warm_valid_ && mpc_.warm_start) {
      const int slots = std::max(0, int(std::llround((t - warm_t_) / mpc_.dt)));
      init = shift_knots(warm_, slots, d_u, n_knots);
    } else {
      init = VectorXd::Zero(n_knots * d_u);
    }

    ObjectiveWithGrad fg = [&](const VectorXd& knots, VectorXd& grad) {
      return adjoint_gradient(models_, cost_, x, knots, grid, bounds_,
                              settings_.plan_integrator, grad);
    };
    PlanResultKnots result;
    if (bfgs_) {
      BfgsConfig cfg = settings_.bfgs;
      cfg.iterations = iterations;
      result = bfgs_plan(fg, bounds_, n_knots, cfg, init);
    } else {
      GradPlanConfig cfg = settings_.grad;
      cfg.iterations = iterations;
      result = adam_plan(fg, bounds_, n_knots, cfg, init);
    }
    warm_ = result.knots;
    warm_t_ = t;
    warm_valid_ = true;
    return signal_from_knots(result.knots, grid, d_u);
  }

  void reset() override { warm_valid_ = false; }

private:
  bool bfgs_;
  ModelList models_;
  QuadraticCost cost_;
  ControlBounds bounds_;
  MpcConfig mpc_;
  PlannerSettings settings_;
  VectorXd warm_;
  double warm_t_ = 0.0;
  bool warm_valid_ = false;
};

}  // namespace

std::unique_ptr<StepPlanner> make_planner(const std::string& name, ModelList models,
                                          QuadraticCost cost, ControlBounds bounds,
                                          const MpcConfig& mpc, const PlannerSettings& settings,
                                          std::uint64_t seed) {
  if (name == "pmp_mean_h")
    return std::make_unique<PmpMeanHPlanner>(std::move(models), std::move(cost),
                                             std::move(bounds), mpc, settings);
  if (name == "pmp_mean_u")
    return std::make_unique<PmpMeanUPlanner>(std::move(models), std::move(cost),
                                             std::move(bounds), mpc, settings);
  if (name == "icem")
    return std::make_unique<IcemPlanner>(std::move(models), std::move(cost), std::move(bounds),
                                         mpc, settings, seed);
  if (name == "adam")
    return std::make_unique<GradientPlanner>(false, std::move(models), std::move(cost),
                                             std::move(bounds), mpc, settings);
  if (name == "bfgs")
    return std::make_unique<GradientPlanner>(true, std::move(models), std::move(cost),
                                             std::move(bounds), mpc, settings);
  throw UsageError("make_planner: unknown planner '" + name + "'");
}

MpcResult run_mpc(StepPlanner& planner, const Plant& plant, const QuadraticCost& cost,
                  const ControlBounds& bounds, const VectorXd& x0, double t0, double tf,
                  const MpcConfig& mpc, std::uint64_t seed) {
  mpc.validate();
  if (!(tf > t0)) throw UsageError("run_mpc: need tf > t0");
  const auto start_time = std::chrono::steady_clock::now();
  const int n_steps = std::max(1, int(std::llround((tf - t0) / mpc.dt)));
  const int d = int(x0.size());
  const int d_u = bounds.dim();
  const int sub = 5;  // realized-trajectory samples per step

  Rng rng(mix_seed(seed, 0xCAFE));
  MpcResult out;
  std::vector<double> times;
  std::vector<VectorXd> states;
  std::vector<VectorXd> controls;
  times.push_back(t0);
  states.push_back(x0);

  IntegratorConfig plant_integ = IntegratorConfig::oracle();
  VectorXd x = x0;
  double accumulated = 0.0;
  ControlSignal current_plan;
  bool have_plan = false;

  for (int k = 0; k < n_steps; ++k) {
    const double t_k = t0 + (tf - t0) * double(k) / double(n_steps);
    const double t_next = (k + 1 == n_steps) ? tf : t0 + (tf - t0) * double(k + 1) / double(n_steps);
    const double horizon_end = std::min(t_k + mpc.horizon, tf);

    VectorXd y = x;
    if (plant.noise_sigma > 0.0) y += plant.noise_sigma * rng.normal_vector(d);

    try {
      current_plan = planner.plan(y, t_k, horizon_end, mpc.iterations_per_step);
      have_plan = true;
    } catch (const NumericalError&) {
      ++out.flagged_steps;
      if (!have_plan)
        current_plan = ControlSignal::constant(VectorXd::Zero(d_u), t_k, horizon_end);
    }
    out.step_residuals.push_back(planner.last_residual());

    // apply the first dt of the plan to the true plant, with the running
    // cost as an augmented coordinate
    VectorXd u_buf(d_u);
    const ControlSignal& plan_ref = current_plan;
    auto rhs = [&](double t, const VectorXd& z, VectorXd& dz) {
      plan_ref.eval_into(t, u_buf);
      bounds.clamp_in_place(u_buf);
      plant.system->eval_f(z.head(d), u_buf, t, dz.head(d));
      dz[d] = cost.running(z.head(d), u_buf);
    };
    VectorXd z0(d + 1);
    z0 << x, accumulated;
    VectorXd dense(sub);
    for (int j = 1; j <= sub; ++j)
      dense[j - 1] = t_k + (t_next - t_k) * double(j) / double(sub);
    Trajectory seg = integrate_adaptive(rhs, z0, t_k, t_next, plant_integ, &dense);
    if (k == 0) {
      // control at t0 (recorded trajectory starts there)
      plan_ref.eval_into(t_k, u_buf);
      bounds.clamp_in_place(u_buf);
      controls.push_back(u_buf);
    }
    for (int j = 0; j < seg.size(); ++j) {
      times.push_back(seg.times[j]);
      states.push_back(seg.states.col(j).head(d));
      plan_ref.eval_into(seg.times[j], u_buf);
      bounds.clamp_in_place(u_buf);
      controls.push_back(u_buf);
    }

    x = seg.back().head(d);
    accumulated = seg.back()[d];
  }
  out.realized_cost = accumulated + cost.terminal(x);

  out.realized.times.resize(long(times.size()));
  out.realized.states.resize(d, long(states.size()));
  for (size_t i = 0; i < times.size(); ++i) {
    out.realized.times[long(i)] = times[i];
    out.realized.states.col(long(i)) = states[i];
  }
  MatrixXd u_values(d_u, long(controls.size()));
  for (size_t i = 0; i < controls.size(); ++i) u_values.col(long(i)) = controls[i];
  out.applied = ControlSignal(out.realized.times, u_values);

  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return out;
}

}  // namespace pmpc
