#include "pmpc/hamiltonian.hpp"

#include <cmath>
#include <sstream>

namespace pmpc {

double hamiltonian(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x,
                   const VectorXd& lambda, const VectorXd& u, double t) {
  return cost.running(x, u) + lambda.dot(model.f(x, u, t));
}

double mean_hamiltonian(const ModelList& models, const QuadraticCost& cost,
                        const HamiltonianContext& ctx, const VectorXd& u) {
  if (int(models.size()) != ctx.members())
    throw UsageError("mean_hamiltonian: context size does not match ensemble size");
  double sum = 0.0;
  for (size_t i = 0; i < models.size(); ++i)
    sum += hamiltonian(*models[i], cost, ctx.states.col(long(i)), ctx.costates.col(long(i)), u,
                       ctx.time);
  return sum / double(models.size());
}

VectorXd mean_hamiltonian_grad_u(const ModelList& models, const QuadraticCost& cost,
                                 const HamiltonianContext& ctx, const VectorXd& u) {
  if (int(models.size()) != ctx.members())
    throw UsageError("mean_hamiltonian_grad_u: context size does not match ensemble size");
  VectorXd g = cost.grad_u_running(u);
  for (size_t i = 0; i < models.size(); ++i)
    g += models[i]->jac_u(ctx.states.col(long(i)), u, ctx.time).transpose() *
         ctx.costates.col(long(i)) / double(models.size());
  return g;
}

VectorXd costate_rhs(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x,
                     const VectorXd& lambda, const VectorXd& u, double t) {
  return -(cost.grad_x_running(x) + model.jac_x(x, u, t).transpose() * lambda);
}

VectorXd minimize_mean_hamiltonian(const ModelList& models, const QuadraticCost& cost,
                                   const HamiltonianContext& ctx, const VectorXd& u_init,
                                   const ControlBounds& bounds, const MinimizeOptions& opts) {
  MeanHamiltonianMinimizer minimizer(models, &cost, bounds, opts);
  return minimizer.minimize(ctx, u_init);
}

MeanHamiltonianMinimizer::MeanHamiltonianMinimizer(ModelList models, const QuadraticCost* cost,
                                                   ControlBounds bounds, MinimizeOptions opts)
    : models_(std::move(models)), cost_(cost), bounds_(std::move(bounds)), opts_(opts) {
  if (models_.empty()) throw UsageError("MeanHamiltonianMinimizer: empty model list");
  const int d_x = models_[0]->state_dim();
  const int d_u = models_[0]->control_dim();
  const int m = int(models_.size());
  f_.resize(d_x, m);
  f_try_.resize(d_x, m);
  jx_.assign(size_t(m), MatrixXd(d_x, d_x));
  ju_.assign(size_t(m), MatrixXd(d_x, d_u));
  u_.resize(d_u);
  grad_.resize(d_u);
}

double MeanHamiltonianMinimizer::eval_full(const HamiltonianContext& ctx, const VectorXd& u,
                                           VectorXd& grad) {
  const int m = int(models_.size());
  grad = cost_->grad_u_running(u);
  double h = u.dot(cost_->R() * u);
  for (int i = 0; i < m; ++i) {
    models_[i]->eval_with_jacobians(ctx.states.col(i), u, ctx.time, f_.col(i), jx_[size_t(i)],
                                    ju_[size_t(i)]);
    if (!f_.col(i).allFinite()) {
      std::ostringstream msg;
      msg << "mean Hamiltonian: member " << i << " produced a non-finite value";
      throw NumericalError(msg.str());
    }
    h += (cost_->state_cost(ctx.states.col(i)) + ctx.costates.col(i).dot(f_.col(i))) / double(m);
    grad.noalias() += ju_[size_t(i)].transpose() * ctx.costates.col(i) / double(m);
  }
  return h;
}

double MeanHamiltonianMinimizer::eval_value(const HamiltonianContext& ctx, const VectorXd& u) {
  const int m = int(models_.size());
  double h = u.dot(cost_->R() * u);
  for (int i = 0; i < m; ++i) {
    models_[i]->eval_f(ctx.states.col(i), u, ctx.time, f_try_.col(i));
    if (!f_try_.col(i).allFinite()) {
      std::ostringstream msg;
      msg << "mean Hamiltonian: member " << i << " produced a non-finite value";
      throw NumericalError(msg.str());
    }
    h += (cost_->state_cost(ctx.states.col(i)) + ctx.costates.col(i).dot(f_try_.col(i))) / double(m);
  }
  return h;
}

const VectorXd& MeanHamiltonianMinimizer::minimize(const HamiltonianContext& ctx,
                                                   const VectorXd& u_init) {
  if (int(models_.size()) != ctx.members())
    throw UsageError("minimize_mean_hamiltonian: context size does not match ensemble size");
  u_ = bounds_.clamp(u_init);
  double h = eval_full(ctx, u_, grad_);
  iterations_ = 0;
  for (int it = 0; it < opts_.max_iterations; ++it) {
    pg_ = u_ - bounds_.clamp(u_ - grad_);
    if (pg_.lpNorm<Eigen::Infinity>() <= opts_.grad_tol) break;
    iterations_ = it + 1;

    delta_ = -0.5 * cost_->solve_R(grad_);
    bool accepted = false;
    double alpha = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      u_try_ = bounds_.clamp(u_ + alpha * delta_);
      const VectorXd du = u_try_ - u_;
      if (du.lpNorm<Eigen::Infinity>() < 1e-16) break;  // pinned at the boundary
      const double h_try = eval_value(ctx, u_try_);
      if (h_try <= h + 1e-4 * grad_.dot(du)) {
        u_ = u_try_;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    h = eval_full(ctx, u_, grad_);
  }
  mean_h_ = h;
  return u_;
}

double trajectory_cost(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x0,
                       const ControlSignal& ctrl, double t0, double tf,
                       const IntegratorConfig& config, std::string* diagnostic,
                       const ControlBounds* clamp) {
  const int d = model.state_dim();
  VectorXd u(model.control_dim());
  VectorXd z0(d + 1);
  z0 << x0, 0.0;
  auto rhs = [&](double t, const VectorXd& z, VectorXd& dz) {
    ctrl.eval_into(t, u);
    if (clamp) clamp->clamp_in_place(u);
    model.eval_f(z.head(d), u, t, dz.head(d));
    dz[d] = cost.running(z.head(d), u);
  };
  try {
    VectorXd t_end(1);
    t_end << tf;
    Trajectory traj = integrate_adaptive(rhs, z0, t0, tf, config, &t_end);
    const VectorXd zf = traj.back();
    return zf[d] + cost.terminal(zf.head(d));
  } catch (const NumericalError& e) {
    if (diagnostic) *diagnostic = e.what();
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace pmpc
