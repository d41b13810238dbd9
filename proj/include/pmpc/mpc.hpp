#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/control_signal.hpp"
#include "pmpc/cost.hpp"
#include "pmpc/integrate.hpp"
#include "pmpc/planners.hpp"
#include "pmpc/shooting.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

struct MpcConfig {
  double horizon = 1.0;         // moving-horizon length H (seconds)
  double dt = 0.05;             // replanning interval / control knot spacing
  int iterations_per_step = 15; // optimizer iterations per MPC step
  std::string planner = "pmp_mean_h";
  bool warm_start = true;

  void validate() const {
    if (!(horizon >= dt && dt > 0.0)) throw UsageError("MpcConfig: need H >= dt > 0");
  }
};

/// Simulated true system; observations add N(0, sigma^2 I) noise while the
/// plant itself evolves noise-free.
struct Plant {
  ModelPtr system;
  double noise_sigma = 0.0;
};

struct MpcResult {
  Trajectory realized;    // true noise-free trajectory (dense samples)
  ControlSignal applied;  // applied control resampled on a fine grid
  double realized_cost = 0.0;
  int flagged_steps = 0;  // steps where planning failed and the previous plan was reused
  double wall_time_s = 0.0;
  std::vector<double> step_residuals;  // PMP planners: LM residual per step
};

/// Everything the planner implementations need besides the MPC window.
struct PlannerSettings {
  int segments = 1;  // shooting segments (PMP planners)
  IntegratorConfig plan_integrator;
  MinimizeOptions argmin;
  SolverConfig solver;  // max_iterations is overridden per step
  IcemConfig icem;
  GradPlanConfig grad;
  BfgsConfig bfgs;
  int rollout_substeps = 1;  // batched iCEM objective substeps per knot
  int threads = 1;
  bool icem_exact_objective = false;  // adaptive-integrator objective (slow, tests only)
};

/// One receding-horizon planner instance; `plan` returns a control signal
/// covering at least [t, t_end]. Implementations carry warm-start state.
class StepPlanner {
public:
  virtual ~StepPlanner() = default;
  virtual ControlSignal plan(const VectorXd& x, double t, double t_end, int iterations) = 0;
  virtual void reset() {}
  virtual double last_residual() const { return std::numeric_limits<double>::quiet_NaN(); }
};

/// Planner factory: "pmp_mean_h", "pmp_mean_u", "icem", "adam", "bfgs".
std::unique_ptr<StepPlanner> make_planner(const std::string& name, ModelList models,
                                          QuadraticCost cost, ControlBounds bounds,
                                          const MpcConfig& mpc, const PlannerSettings& settings,
                                          std::uint64_t seed);

/// Receding-horizon loop: observe (noisy), replan over [t, min(t+H, tf)],
/// apply the first dt of the plan to the true plant. The realized cost is
/// integrated along the true noise-free trajectory over the full task.
MpcResult run_mpc(StepPlanner& planner, const Plant& plant, const QuadraticCost& cost,
                  const ControlBounds& bounds, const VectorXd& x0, double t0, double tf,
                  const MpcConfig& mpc, std::uint64_t seed);

}  // namespace pmpc
