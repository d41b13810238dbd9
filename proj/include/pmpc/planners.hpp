#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "pmpc/common.hpp"
#include "pmpc/control_signal.hpp"
#include "pmpc/cost.hpp"
#include "pmpc/hamiltonian.hpp"
#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

/// Scalar objective over a flat knot vector (knot-major, d_u entries per knot).
using Objective = std::function<double(const VectorXd&)>;
/// Batched objective: one candidate per column, returns one cost per column.
using BatchObjective = std::function<VectorXd(const MatrixXd&)>;

/// Uniform knot grid over a planning window.
VectorXd uniform_knot_times(double t0, double tf, int n_knots);

/// Cubic control signal from a flat knot vector on the given grid.
ControlSignal signal_from_knots(const VectorXd& knots, const VectorXd& knot_times, int d_u);

/// Ensemble-mean trajectory cost of the cubic control built from `knots`,
/// clamped to bounds at evaluation time. Divergence yields +infinity.
double mean_cost_objective(const ModelList& models, const QuadraticCost& cost, const VectorXd& x0,
                           const VectorXd& knots, const VectorXd& knot_times,
                           const ControlBounds& bounds, const IntegratorConfig& integ);

/// Gradient of the discretized mean cost with respect to the control knots:
/// per member a forward state pass and a backward costate pass from
/// lambda(tf) = grad Phi, then projection of grad_u H onto the cubic spline
/// basis on a dense quadrature grid. Returns the mean cost and fills grad.
/// Quadrature points where the evaluated control is clamped contribute zero
/// (subgradient through the clamp).
double adjoint_gradient(const ModelList& models, const QuadraticCost& cost, const VectorXd& x0,
                        const VectorXd& knots, const VectorXd& knot_times,
                        const ControlBounds& bounds, const IntegratorConfig& integ,
                        VectorXd& grad, int quad_per_interval = 4);

struct IcemConfig {
  int population = 64;
  double elite_frac = 0.125;
  int iterations = 15;
  double noise_beta = 2.0;   // colored-noise exponent (power ~ 1/f^beta)
  double init_std = -1.0;    // <= 0: 0.5 * (u_max - u_min)
  double min_std = -1.0;     // <= 0: 0.01 * (u_max - u_min)
  double momentum = 0.1;
  bool shift_elites = true;
};

/// Carried between MPC steps: sampling mean and the last elite set.
struct IcemWarmState {
  VectorXd mean;
  MatrixXd elites;  // one elite per column
  bool valid = false;
};

struct IcemResult {
  VectorXd knots;
  double cost = 0.0;
  VectorXd best_cost_per_iteration;  // non-increasing
};

/// Improved cross-entropy method over knot space with temporally colored
/// noise, elite momentum updates, best-so-far retention and optional elite
/// injection from the warm state. Deterministic per seed.
IcemResult icem_plan(const BatchObjective& objective, const ControlBounds& bounds, int n_knots,
                     const IcemConfig& config, std::uint64_t seed,
                     const VectorXd* init_mean = nullptr, IcemWarmState* warm = nullptr);

/// Colored noise with power spectrum ~ 1/f^beta over n samples, unit
/// variance (spectral synthesis; beta = 0 is white).
VectorXd colored_noise(int n, double beta, class Rng& rng);

struct GradPlanConfig {
  int iterations = 15;
  double learning_rate = -1.0;  // <= 0: 0.05 * (u_max - u_min)
};

using ObjectiveWithGrad = std::function<double(const VectorXd&, VectorXd&)>;

struct PlanResultKnots {
  VectorXd knots;
  double cost = 0.0;
};

/// Adaptive-moment gradient descent on the knots, projected onto the box
/// each step; returns the best iterate seen.
PlanResultKnots adam_plan(const ObjectiveWithGrad& fg, const ControlBounds& bounds, int n_knots,
                          const GradPlanConfig& config, const VectorXd& init);

struct BfgsConfig {
  int iterations = 50;
  double armijo_c = 1e-4;
  double grad_tol = 1e-9;
  double curvature_skip = 1e-10;  // skip updates with s.y below this
};

/// Quasi-Newton (inverse BFGS) with backtracking line search, projection
/// onto the box, and steepest-descent fallback when the line search fails.
PlanResultKnots bfgs_plan(const ObjectiveWithGrad& fg, const ControlBounds& bounds, int n_knots,
                          const BfgsConfig& config, const VectorXd& init);

/// Fast sampling objective for MPC: batched fixed-step RK4 rollouts of every
/// ensemble member under each candidate control, sharing one spline-basis
/// matrix for all candidates. Costs of diverging rollouts saturate at a
/// large sentinel instead of throwing.
class BatchRolloutCost {
public:
  BatchRolloutCost(ModelList models, const QuadraticCost* cost, VectorXd x0,
                   VectorXd knot_times, ControlBounds bounds, int substeps_per_knot = 1,
                   int threads = 1);

  VectorXd operator()(const MatrixXd& candidates) const;
  int n_knots() const { return int(knot_times_.size()); }

private:
  ModelList models_;
  const QuadraticCost* cost_;
  VectorXd x0_;
  VectorXd knot_times_;
  ControlBounds bounds_;
  int substeps_;
  int threads_;
  VectorXd stage_times_;
  MatrixXd stage_basis_;  // n_stage x n_knots
};

}  // namespace pmpc
