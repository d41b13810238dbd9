#pragma once

#include <Eigen/Dense>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/control_signal.hpp"
#include "pmpc/cost.hpp"
#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

/// Member states and costates at one time instant, one column per member.
struct HamiltonianContext {
  MatrixXd states;
  MatrixXd costates;
  double time = 0.0;

  int members() const { return int(states.cols()); }
};

/// H(x, lambda, u, t) = L(x, u) + lambda . f(x, u, t).
double hamiltonian(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x,
                   const VectorXd& lambda, const VectorXd& u, double t);

/// Uniform ensemble average of member Hamiltonians at the context states.
double mean_hamiltonian(const ModelList& models, const QuadraticCost& cost,
                        const HamiltonianContext& ctx, const VectorXd& u);

/// grad_u of the mean Hamiltonian: 2 R u + mean_i jac_u(x_i, u)^T lambda_i.
VectorXd mean_hamiltonian_grad_u(const ModelList& models, const QuadraticCost& cost,
                                 const HamiltonianContext& ctx, const VectorXd& u);

/// lambda' = -grad_x H = -(2 Q (x - x*) + jac_x^T lambda).
VectorXd costate_rhs(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x,
                     const VectorXd& lambda, const VectorXd& u, double t);

struct MinimizeOptions {
  double grad_tol = 1e-8;  // infinity norm of the projected gradient
  int max_iterations = 50;
};

/// Pointwise minimizer of the mean Hamiltonian over the control box.
/// Projected Newton steps with the exact quadratic-metric 2R and Armijo
/// backtracking; exact in one step for control-affine members.
VectorXd minimize_mean_hamiltonian(const ModelList& models, const QuadraticCost& cost,
                                   const HamiltonianContext& ctx, const VectorXd& u_init,
                                   const ControlBounds& bounds, const MinimizeOptions& opts = {});

/// Stateful variant bound to one model set; retains the per-member value
/// and Jacobians evaluated at the minimizer so integrator right-hand sides
/// can reuse them. Not safe for concurrent use of one instance.
class MeanHamiltonianMinimizer {
public:
  MeanHamiltonianMinimizer(ModelList models, const QuadraticCost* cost, ControlBounds bounds,
                           MinimizeOptions opts = {});

  /// Returns the minimizer; member_f()/member_jac_x() are then valid at it.
  const VectorXd& minimize(const HamiltonianContext& ctx, const VectorXd& u_init);

  const MatrixXd& member_f() const { return f_; }
  const std::vector<MatrixXd>& member_jac_x() const { return jx_; }
  double mean_h() const { return mean_h_; }
  int iterations() const { return iterations_; }
  const ModelList& models() const { return models_; }

private:
  double eval_full(const HamiltonianContext& ctx, const VectorXd& u, VectorXd& grad);
  double eval_value(const HamiltonianContext& ctx, const VectorXd& u);

  ModelList models_;
  const QuadraticCost* cost_;
  ControlBounds bounds_;
  MinimizeOptions opts_;

  VectorXd u_, u_try_, grad_, delta_, pg_;
  MatrixXd f_, f_try_;
  std::vector<MatrixXd> jx_, ju_;
  double mean_h_ = 0.0;
  int iterations_ = 0;
};

/// Cost of rolling out `ctrl` from x0 through one model: the running cost is
/// integrated as an augmented state coordinate; returns quadrature plus
/// terminal cost, or +infinity if the rollout diverges. When `clamp` is
/// given the control is clamped to it at evaluation time.
double trajectory_cost(const DynamicsModel& model, const QuadraticCost& cost, const VectorXd& x0,
                       const ControlSignal& ctrl, double t0, double tf,
                       const IntegratorConfig& config, std::string* diagnostic = nullptr,
                       const ControlBounds* clamp = nullptr);

}  // namespace pmpc
