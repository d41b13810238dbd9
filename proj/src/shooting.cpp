#include "pmpc/shooting.hpp"

#include <algorithm>
#include <cmath>

#include "pmpc/parallel.hpp"

namespace pmpc {

void ShootingProblem::validate() const {
  if (models.empty()) throw UsageError("ShootingProblem: empty model list");
  if (segments < 1) throw UsageError("ShootingProblem: need at least one segment");
  if (!(tf > t0)) throw UsageError("ShootingProblem: need tf > t0");
  if (!(control_dt > 0.0)) throw UsageError("ShootingProblem: control_dt must be positive");
  const int d = state_dim();
  for (const auto& m : models) {
    if (m->state_dim() != d) throw UsageError("ShootingProblem: member state dimension mismatch");
    if (m->control_dim() != bounds.dim())
      throw UsageError("ShootingProblem: member control dimension mismatch");
  }
  if (cost.state_dim() != d || cost.control_dim() != bounds.dim())
    throw UsageError("ShootingProblem: cost dimension mismatch");
  integrator.validate();
}

namespace {

/// Coupled flow of all members under the pointwise mean-Hamiltonian
/// minimizer: z = [x_1..x_M | lambda_1..lambda_M | running costs (optional)].
class MeanFlow {
public:
  MeanFlow(const ShootingProblem& p, bool with_cost)
      : p_(p),
        argmin_(p.models, &p.cost, p.bounds, p.argmin),
        with_cost_(with_cost),
        d_(p.state_dim()),
        m_(p.members()) {
    ctx_.states.resize(d_, m_);
    ctx_.costates.resize(d_, m_);
    u_warm_ = VectorXd::Zero(p.control_dim());
    err_.resize(d_);
  }

  int dim() const { return 2 * m_ * d_ + (with_cost_ ? m_ : 0); }

  VectorXd pack(const Eigen::Ref<const MatrixXd>& states,
                const Eigen::Ref<const MatrixXd>& costates, const VectorXd* costs) const {
    VectorXd z(dim());
    for (int i = 0; i < m_; ++i) {
      z.segment(i * d_, d_) = states.col(i);
      z.segment((m_ + i) * d_, d_) = costates.col(i);
    }
    if (with_cost_) z.tail(m_) = costs ? *costs : VectorXd::Zero(m_);
    return z;
  }

  void unpack(const VectorXd& z, MatrixXd& states, MatrixXd& costates, VectorXd* costs) const {
    for (int i = 0; i < m_; ++i) {
      states.col(i) = z.segment(i * d_, d_);
      costates.col(i) = z.segment((m_ + i) * d_, d_);
    }
    if (costs && with_cost_) *costs = z.tail(m_);
  }

  void operator()(double t, const VectorXd& z, VectorXd& dz) {
    for (int i = 0; i < m_; ++i) {
      ctx_.states.col(i) = z.segment(i * d_, d_);
      ctx_.costates.col(i) = z.segment((m_ + i) * d_, d_);
    }
    ctx_.time = t;
    const VectorXd& u = argmin_.minimize(ctx_, u_warm_);
    u_warm_ = u;
    const MatrixXd& f = argmin_.member_f();
    const auto& jx = argmin_.member_jac_x();
    const double control_cost = with_cost_ ? u.dot(p_.cost.R() * u) : 0.0;
    for (int i = 0; i < m_; ++i) {
      dz.segment(i * d_, d_) = f.col(i);
      err_ = ctx_.states.col(i) - p_.cost.x_star();
      auto dl = dz.segment((m_ + i) * d_, d_);
      dl.noalias() = -2.0 * (p_.cost.Q() * err_);
      dl.noalias() -= jx[size_t(i)].transpose() * ctx_.costates.col(i);
      if (with_cost_) dz[2 * m_ * d_ + i] = err_.dot(p_.cost.Q() * err_) + control_cost;
    }
  }

  /// Pointwise minimizer at a sampled point of the flow (warm-chained).
  VectorXd control_at(double t, const VectorXd& z) {
    for (int i = 0; i < m_; ++i) {
      ctx_.states.col(i) = z.segment(i * d_, d_);
      ctx_.costates.col(i) = z.segment((m_ + i) * d_, d_);
    }
    ctx_.time = t;
    const VectorXd& u = argmin_.minimize(ctx_, u_warm_);
    u_warm_ = u;
    return u;
  }

private:
  const ShootingProblem& p_;
  MeanHamiltonianMinimizer argmin_;
  bool with_cost_;
  int d_, m_;
  HamiltonianContext ctx_;
  VectorXd u_warm_, err_;
};

VectorXd knot_grid(const ShootingProblem& p) {
  const int n = std::max(1, int(std::llround((p.tf - p.t0) / p.control_dt)));
  return VectorXd::LinSpaced(n + 1, p.t0, p.tf);
}

/// Integrates segments [from, S). X holds the chained member states at the
/// start of segment `from`. Residual blocks for those segments are written
/// to res_tail (size (S-from)*M*d). segment_starts (d x S*M) records the
/// chained states for segments >= from when given. fwd (only valid with
/// from == 0) collects knot samples, the control signal and member costs.
/// record/replay hold per-segment step sequences (indexed by segment) for
/// internal numerical differentiation.
void forward_segments(const ShootingProblem& p, const ShootingVars& vars, int from, MatrixXd X,
                      Eigen::Ref<VectorXd> res_tail, MatrixXd* segment_starts,
                      ShootingForward* fwd, std::vector<StepSequence>* record = nullptr,
                      const std::vector<StepSequence>* replay = nullptr) {
  const int d = p.state_dim(), m = p.members(), s = p.segments;
  const bool with_outputs = fwd != nullptr;
  MeanFlow flow(p, with_outputs);
  OdeRhs rhs = [&flow](double t, const VectorXd& z, VectorXd& dz) { flow(t, z, dz); };

  VectorXd knots;
  std::vector<double> sample_times;
  std::vector<VectorXd> sample_z;
  if (with_outputs) {
    knots = knot_grid(p);
    sample_times.reserve(size_t(knots.size()));
    sample_z.reserve(size_t(knots.size()));
  }

  const double span = p.tf - p.t0;
  VectorXd costs = VectorXd::Zero(m);
  MatrixXd lam(d, m);
  for (int k = from; k < s; ++k) {
    const double ta = p.t0 + span * double(k) / double(s);
    const double tb = (k + 1 == s) ? p.tf : p.t0 + span * double(k + 1) / double(s);
    if (segment_starts) segment_starts->middleCols(k * m, m) = X;

    VectorXd z0 = flow.pack(X, vars.segment(k), &costs);
    if (with_outputs && k == 0) {
      sample_times.push_back(ta);
      sample_z.push_back(z0);
    }

    // dense sample points: knots inside (ta, tb] plus the segment end
    std::vector<double> dense;
    if (with_outputs) {
      for (int j = 0; j < knots.size(); ++j) {
        const double tj = knots[j];
        if (tj > ta + 1e-12 * std::abs(span) && tj <= tb + 1e-12 * std::abs(span))
          dense.push_back(std::min(tj, tb));
      }
    }
    if (dense.empty() || std::abs(dense.back() - tb) > 1e-12 * std::abs(span))
      dense.push_back(tb);
    VectorXd dense_times = Eigen::Map<VectorXd>(dense.data(), long(dense.size()));

    Trajectory seg = integrate_adaptive(rhs, z0, ta, tb, p.integrator, &dense_times,
                                        record ? &(*record)[size_t(k)] : nullptr,
                                        replay ? &(*replay)[size_t(k)] : nullptr);

    if (with_outputs) {
      // record every sampled time that lies on the knot grid
      for (int j = 0; j < seg.size(); ++j) {
        const double tj = seg.times[j];
        bool knot = false;
        for (int q = 0; q < knots.size(); ++q)
          if (std::abs(knots[q] - tj) <= 1e-9 * std::max(1.0, std::abs(span))) {
            knot = true;
            break;
          }
        if (knot) {
          sample_times.push_back(tj);
          sample_z.push_back(seg.state(j));
        }
      }
    }

    const VectorXd z_end = seg.back();
    flow.unpack(z_end, X, lam, &costs);

    auto block = res_tail.segment((k - from) * m * d, m * d);
    if (k + 1 < s) {
      Eigen::Map<const MatrixXd> next(vars.flat.data() + (k + 1) * m * d, d, m);
      for (int i = 0; i < m; ++i) block.segment(i * d, d) = lam.col(i) - next.col(i);
    } else {
      for (int i = 0; i < m; ++i)
        block.segment(i * d, d) = lam.col(i) - p.cost.grad_terminal(X.col(i));
    }
  }

  if (with_outputs) {
    // terminal member costs
    fwd->member_costs.resize(m);
    for (int i = 0; i < m; ++i) fwd->member_costs[i] = costs[i] + p.cost.terminal(X.col(i));

    // control knots by pointwise minimization along the sampled flow
    const int n_knots = int(sample_times.size());
    MatrixXd u_knots(p.control_dim(), n_knots);
    VectorXd times(n_knots);
    MeanFlow sampler(p, false);
    for (int j = 0; j < n_knots; ++j) {
      times[j] = sample_times[size_t(j)];
      u_knots.col(j) = p.bounds.clamp(sampler.control_at(times[j], sample_z[size_t(j)]));
    }
    fwd->control = ControlSignal(times, u_knots);

    // augmented member trajectories [x; lambda] at the knots
    fwd->member_trajectories.assign(size_t(m), Trajectory{});
    for (int i = 0; i < m; ++i) {
      Trajectory& tr = fwd->member_trajectories[size_t(i)];
      tr.times = times;
      tr.states.resize(2 * d, n_knots);
      for (int j = 0; j < n_knots; ++j) {
        tr.states.col(j).head(d) = sample_z[size_t(j)].segment(i * d, d);
        tr.states.col(j).tail(d) = sample_z[size_t(j)].segment((m + i) * d, d);
      }
    }
  }
}

}  // namespace

VectorXd shooting_residual(const ShootingProblem& problem, const ShootingVars& vars,
                           ShootingForward* forward) {
  problem.validate();
  const int d = problem.state_dim(), m = problem.members(), s = problem.segments;
  if (vars.members != m || vars.segments != s || vars.dim != d)
    throw UsageError("shooting_residual: vars shape mismatch");
  if (!vars.flat.allFinite()) throw UsageError("shooting_residual: non-finite guesses");

  VectorXd res(problem.n_vars());
  MatrixXd starts(d, s * m);
  MatrixXd x0rep = problem.x0.replicate(1, m);
  forward_segments(problem, vars, 0, x0rep, res, &starts, forward);
  if (forward) forward->segment_starts = starts;
  return res;
}

namespace {

struct LmState {
  ShootingVars vars;
  VectorXd residual;
  MatrixXd starts;
  double inf_norm = std::numeric_limits<double>::infinity();
};

/// Forward-difference Jacobian exploiting the lower block-triangular
/// structure: a perturbation of a segment-k guess only affects residual
/// blocks for segments >= k, so each column re-integrates only the tail.
/// Perturbed passes replay the base pass' accepted step sequence, which
/// removes the integrator's adaptive error control from the differences.
MatrixXd fd_jacobian(const ShootingProblem& p, const LmState& st) {
  const int d = p.state_dim(), m = p.members(), s = p.segments;
  const int n = p.n_vars();
  const int block = m * d;
  const double eps = p.solver.fd_eps;

  // fresh base tails per segment (warm-start parity with the columns),
  // recording the step sequences the columns will replay
  std::vector<VectorXd> base_tails(static_cast<size_t>(s));
  std::vector<std::vector<StepSequence>> base_steps(static_cast<size_t>(s));
  parallel_for(
      s,
      [&](int k) {
        VectorXd tail((s - k) * block);
        std::vector<StepSequence> steps(static_cast<size_t>(s));
        forward_segments(p, st.vars, k, st.starts.middleCols(k * m, m), tail, nullptr, nullptr,
                         &steps);
        base_tails[size_t(k)] = std::move(tail);
        base_steps[size_t(k)] = std::move(steps);
      },
      p.solver.threads);

  MatrixXd jac = MatrixXd::Zero(n, n);
  parallel_for(
      n,
      [&](int c) {
        const int k = c / block;
        ShootingVars pert = st.vars;
        pert.flat[c] += eps;
        VectorXd tail((s - k) * block);
        forward_segments(p, pert, k, st.starts.middleCols(k * m, m), tail, nullptr, nullptr,
                         nullptr, &base_steps[size_t(k)]);
        jac.col(c).tail((s - k) * block) = (tail - base_tails[size_t(k)]) / eps;
        // direct coupling: the continuity defect of segment k-1 carries
        // -lambda_guess[k]
        if (k > 0) jac(c - block, c) -= 1.0;
      },
      p.solver.threads);
  return jac;
}

}  // namespace

SolveResult solve_mean_h(const ShootingProblem& problem, const ShootingVars* init) {
  problem.validate();
  const int d = problem.state_dim(), m = problem.members(), s = problem.segments;
  const int n = problem.n_vars();

  LmState cur;
  cur.vars = init ? *init : ShootingVars::zero(m, s, d);
  if (cur.vars.members != m || cur.vars.segments != s || cur.vars.dim != d)
    throw UsageError("solve_mean_h: init vars shape mismatch");
  cur.residual.resize(n);
  cur.starts.resize(d, s * m);
  forward_segments(problem, cur.vars, 0, problem.x0.replicate(1, m), cur.residual, &cur.starts,
                   nullptr);
  cur.inf_norm = cur.residual.lpNorm<Eigen::Infinity>();

  LmState best = cur;
  double mu = problem.solver.damping_init;
  int iterations = 0;
  bool converged = cur.inf_norm <= problem.solver.residual_tol;

  VectorXd g(n), delta(n);
  MatrixXd gram(n, n);
  for (int it = 1; it <= problem.solver.max_iterations && !converged; ++it) {
    iterations = it;
    const MatrixXd jac = fd_jacobian(problem, cur);
    gram.noalias() = jac.transpose() * jac;
    g.noalias() = jac.transpose() * cur.residual;

    bool accepted = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      MatrixXd damped = gram;
      damped.diagonal().array() += mu;
      delta = Eigen::LDLT<MatrixXd>(damped).solve(-g);

      LmState trial;
      trial.vars = cur.vars;
      trial.vars.flat += delta;
      trial.residual.resize(n);
      trial.starts.resize(d, s * m);
      bool ok = true;
      try {
        forward_segments(problem, trial.vars, 0, problem.x0.replicate(1, m), trial.residual,
                         &trial.starts, nullptr);
      } catch (const NumericalError&) {
        ok = false;
      }
      if (ok && trial.residual.norm() < cur.residual.norm()) {
        trial.inf_norm = trial.residual.lpNorm<Eigen::Infinity>();
        cur = std::move(trial);
        mu = std::max(mu / 10.0, 1e-14);
        accepted = true;
        break;
      }
      mu *= 10.0;
      if (mu > 1e12) break;
    }
    if (problem.solver.log)
      problem.solver.log(LmLogRecord{it, cur.inf_norm, mu});
    if (cur.inf_norm < best.inf_norm) best = cur;
    converged = cur.inf_norm <= problem.solver.residual_tol;
    if (!accepted) break;  // damping exhausted
  }
  if (cur.inf_norm < best.inf_norm) best = cur;
  converged = best.inf_norm <= problem.solver.residual_tol;

  // final forward pass with outputs at the best iterate
  SolveResult result;
  ShootingForward fwd;
  shooting_residual(problem, best.vars, &fwd);
  result.control = std::move(fwd.control);
  result.member_trajectories = std::move(fwd.member_trajectories);
  result.vars = std::move(best.vars);
  result.report.converged = converged;
  result.report.iterations = iterations;
  result.report.residual_norm = best.inf_norm;
  if (problem.replay_cost) {
    double mean_cost = 0.0;
    for (int i = 0; i < m; ++i)
      mean_cost += trajectory_cost(*problem.models[size_t(i)], problem.cost, problem.x0,
                                   result.control, problem.t0, problem.tf, problem.integrator) /
                   double(m);
    result.report.cost_estimate = mean_cost;
  } else {
    double mean_cost = 0.0;
    for (int i = 0; i < m; ++i) mean_cost += fwd.member_costs[i] / double(m);
    result.report.cost_estimate = mean_cost;
  }
  return result;
}

SolveResult solve_mean_u(const ShootingProblem& problem, const std::vector<ShootingVars>* init,
                         std::vector<ShootingVars>* final_vars) {
  problem.validate();
  const int m = problem.members();
  if (init && int(init->size()) != m) throw UsageError("solve_mean_u: init size mismatch");

  std::vector<SolveResult> sub(static_cast<size_t>(m));
  parallel_for(
      m,
      [&](int i) {
        ShootingProblem single = problem;
        single.models = {problem.models[size_t(i)]};
        single.solver.threads = 1;
        single.replay_cost = false;
        const ShootingVars* sub_init = init ? &(*init)[size_t(i)] : nullptr;
        sub[size_t(i)] = solve_mean_h(single, sub_init);
      },
      problem.solver.threads);

  SolveResult result;
  result.report.converged = true;
  result.report.iterations = 0;
  result.report.residual_norm = 0.0;
  std::vector<int> used;
  for (int i = 0; i < m; ++i) {
    if (sub[size_t(i)].report.converged) {
      used.push_back(i);
    } else {
      result.report.failed_members.push_back(i);
      result.report.converged = false;
    }
    result.report.iterations = std::max(result.report.iterations, sub[size_t(i)].report.iterations);
  }
  if (used.empty()) {
    // no member converged; fall back to the best iterates of all members
    for (int i = 0; i < m; ++i) used.push_back(i);
  }

  // knot-wise average of the clamped member controls on the shared grid
  std::vector<const ControlSignal*> signals;
  double res_norm = 0.0;
  for (int i : used) {
    signals.push_back(&sub[size_t(i)].control);
    res_norm = std::max(res_norm, sub[size_t(i)].report.residual_norm);
  }
  result.control = average_controls(signals, problem.bounds);
  result.report.residual_norm = res_norm;

  for (int i = 0; i < m; ++i) {
    if (!sub[size_t(i)].member_trajectories.empty())
      result.member_trajectories.push_back(sub[size_t(i)].member_trajectories[0]);
  }
  if (final_vars) {
    final_vars->clear();
    for (int i = 0; i < m; ++i) final_vars->push_back(sub[size_t(i)].vars);
  }

  if (problem.replay_cost) {
    double mean_cost = 0.0;
    for (int i = 0; i < m; ++i)
      mean_cost += trajectory_cost(*problem.models[size_t(i)], problem.cost, problem.x0,
                                   result.control, problem.t0, problem.tf, problem.integrator) /
                   double(m);
    result.report.cost_estimate = mean_cost;
  }
  return result;
}

ControlSignal average_controls(const std::vector<const ControlSignal*>& signals,
                               const ControlBounds& bounds) {
  if (signals.empty()) throw UsageError("average_controls: no signals");
  const ControlSignal& ref = *signals[0];
  MatrixXd avg = MatrixXd::Zero(ref.knot_values().rows(), ref.knot_values().cols());
  for (const ControlSignal* sig : signals) {
    if (sig->knots() != ref.knots() || sig->dim() != ref.dim())
      throw UsageError("average_controls: grid mismatch");
    avg += sig->knot_values();
  }
  avg /= double(signals.size());
  for (int j = 0; j < avg.cols(); ++j) avg.col(j) = bounds.clamp(avg.col(j));
  return ControlSignal(ref.knot_times(), avg);
}

ShootingVars warm_start_shift(const ShootingVars& vars, double shift,
                              const ShootingProblem& problem) {
  if (shift == 0.0) return vars;
  const double seg_len = problem.segment_length();
  ShootingVars out = ShootingVars::zero(vars.members, vars.segments, vars.dim);
  for (int k = 0; k < vars.segments; ++k) {
    const int src = std::min(vars.segments - 1,
                             k + int(std::floor(shift / seg_len + 1e-9)));
    out.segment(k) = vars.segment(src);
  }
  return out;
}

ShootingVars vars_from_trajectories(const std::vector<Trajectory>& member_trajectories,
                                    const ShootingProblem& problem) {
  const int d = problem.state_dim(), m = problem.members(), s = problem.segments;
  if (int(member_trajectories.size()) != m)
    throw UsageError("vars_from_trajectories: member count mismatch");
  ShootingVars out = ShootingVars::zero(m, s, d);
  for (int i = 0; i < m; ++i) {
    const Trajectory& traj = member_trajectories[size_t(i)];
    if (traj.dim() != 2 * d) throw UsageError("vars_from_trajectories: need [x; lambda] rows");
    const int n = traj.size();
    for (int k = 0; k < s; ++k) {
      const double t = problem.t0 + problem.segment_length() * double(k);
      int j = 0;
      while (j + 2 < n && traj.times[j + 1] <= t) ++j;
      const double t0 = traj.times[j], t1 = traj.times[j + 1];
      const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
      out.segment(k).col(i) =
          (1.0 - w) * traj.states.col(j).tail(d) + w * traj.states.col(j + 1).tail(d);
    }
  }
  return out;
}

}  // namespace pmpc
