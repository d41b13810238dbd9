#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>

#include "pmpc/common.hpp"

namespace pmpc {

struct IntegratorConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  double h_init = 1e-2;
  double h_max = std::numeric_limits<double>::infinity();
  int max_steps = 100000;

  static IntegratorConfig planning() { return {}; }
  static IntegratorConfig oracle() {
    IntegratorConfig c;
    c.rtol = 1e-8;
    c.atol = 1e-10;
    return c;
  }
  void validate() const;
};

/// Time-stamped states, one column per time point.
struct Trajectory {
  VectorXd times;
  MatrixXd states;

  int size() const { return int(times.size()); }
  int dim() const { return int(states.rows()); }
  VectorXd state(int i) const { return states.col(i); }
  VectorXd back() const { return states.col(states.cols() - 1); }

  /// CSV with header t,x1..xd, one row per time point, full precision.
  void to_csv(const std::string& path) const;
  static Trajectory from_csv(const std::string& path);
};

using OdeRhs = std::function<void(double t, const VectorXd& x, VectorXd& dx)>;

/// Accepted step sizes of an adaptive run, for deterministic replay when
/// differentiating through the integrator (internal numerical
/// differentiation: perturbed passes reuse the nominal step sequence).
struct StepSequence {
  std::vector<double> steps;
};

/// Dormand-Prince 5(4) with standard step-size control and dense output.
/// Integrates from t0 to tf (either direction). If dense_times is given the
/// returned trajectory is sampled there (times must be sorted in integration
/// direction and lie within the span); otherwise accepted steps are returned.
/// `record` captures the accepted steps; `replay` takes exactly the given
/// steps with error control disabled.
Trajectory integrate_adaptive(const OdeRhs& rhs, const VectorXd& x0, double t0, double tf,
                              const IntegratorConfig& config,
                              const VectorXd* dense_times = nullptr,
                              StepSequence* record = nullptr,
                              const StepSequence* replay = nullptr);

/// Classical fixed-step RK4 with n = round((tf-t0)/h) uniform steps.
Trajectory integrate_rk4_fixed(const OdeRhs& rhs, const VectorXd& x0, double t0, double tf,
                               double h);

/// Single classical RK4 step (shared by the fixed-step integrator and the
/// training rollouts).
void rk4_step(const OdeRhs& rhs, double t, double h, const VectorXd& x, VectorXd& out);

}  // namespace pmpc
