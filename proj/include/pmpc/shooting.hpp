#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/control_signal.hpp"
#include "pmpc/cost.hpp"
#include "pmpc/hamiltonian.hpp"
#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

/// Segment-initial costate guesses: one d_x vector per (member, segment),
/// M*S*d_x decision variables in total. Stored segment-major.
struct ShootingVars {
  int members = 0, segments = 0, dim = 0;
  VectorXd flat;

  static ShootingVars zero(int members, int segments, int dim) {
    ShootingVars v;
    v.members = members;
    v.segments = segments;
    v.dim = dim;
    v.flat = VectorXd::Zero(members * segments * dim);
    return v;
  }

  int size() const { return members * segments * dim; }

  /// d x M block of costate guesses at the start of segment k.
  Eigen::Map<MatrixXd> segment(int k) {
    return Eigen::Map<MatrixXd>(flat.data() + k * members * dim, dim, members);
  }
  Eigen::Map<const MatrixXd> segment(int k) const {
    return Eigen::Map<const MatrixXd>(flat.data() + k * members * dim, dim, members);
  }
};

struct LmLogRecord {
  int iteration = 0;
  double residual_norm = 0.0;
  double damping = 0.0;
};

struct SolverConfig {
  int max_iterations = 50;
  double residual_tol = 1e-6;  // infinity norm of the defect vector
  double damping_init = 1e-3;
  double fd_eps = 1e-6;        // forward-difference column perturbation
  int threads = 1;
  std::function<void(const LmLogRecord&)> log;
};

struct ShootingProblem {
  ModelList models;
  QuadraticCost cost;
  ControlBounds bounds;
  VectorXd x0;
  double t0 = 0.0, tf = 1.0;
  int segments = 1;
  double control_dt = 0.05;
  IntegratorConfig integrator;
  SolverConfig solver;
  MinimizeOptions argmin;
  bool replay_cost = true;

  ShootingProblem(ModelList m, QuadraticCost c, ControlBounds b, VectorXd x_init)
      : models(std::move(m)), cost(std::move(c)), bounds(std::move(b)), x0(std::move(x_init)) {}

  int members() const { return int(models.size()); }
  int state_dim() const { return int(x0.size()); }
  int control_dim() const { return bounds.dim(); }
  int n_vars() const { return members() * segments * state_dim(); }
  double segment_length() const { return (tf - t0) / segments; }
  void validate() const;
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double residual_norm = std::numeric_limits<double>::quiet_NaN();
  double cost_estimate = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> failed_members;  // non-converged sub-solves in solve_mean_u
};

/// Byproducts of a forward shooting pass.
struct ShootingForward {
  /// Chained member states at each segment start (d x S*M, segment-major).
  MatrixXd segment_starts;
  /// Control at the uniform knot grid (from pointwise minimization).
  ControlSignal control;
  /// Augmented member trajectories at the knot grid: rows [x; lambda].
  std::vector<Trajectory> member_trajectories;
  /// Integrated running cost + terminal cost per member.
  VectorXd member_costs;
};

/// Sequential forward multiple shooting residual. Member states chain
/// continuously across segments; the residual stacks the costate-continuity
/// defects at interior segment boundaries and the transversality defect
/// lambda(tf) - grad Phi(x(tf)) for the last segment.
VectorXd shooting_residual(const ShootingProblem& problem, const ShootingVars& vars,
                           ShootingForward* forward = nullptr);

struct SolveResult {
  ControlSignal control;
  std::vector<Trajectory> member_trajectories;
  SolveReport report;
  ShootingVars vars;
};

/// Levenberg-Marquardt over the shooting residual (mean-Hamiltonian
/// coupling: one control shared by all members).
SolveResult solve_mean_h(const ShootingProblem& problem, const ShootingVars* init = nullptr);

/// Decoupled variant: M independent single-member solves whose clamped
/// controls are averaged knot-wise. Non-converged members are excluded from
/// the average and flagged in the report.
SolveResult solve_mean_u(const ShootingProblem& problem,
                         const std::vector<ShootingVars>* init = nullptr,
                         std::vector<ShootingVars>* final_vars = nullptr);

/// Shift segment guesses forward by `shift` seconds for MPC warm starting;
/// the tail is filled by repeating the last segment's guess.
ShootingVars warm_start_shift(const ShootingVars& vars, double shift,
                              const ShootingProblem& problem);

/// Knot-wise average of control signals on a shared grid, clamped to the
/// bounds (the aggregation step of solve_mean_u).
ControlSignal average_controls(const std::vector<const ControlSignal*>& signals,
                               const ControlBounds& bounds);

/// Costate guesses sampled from previously solved augmented trajectories
/// (rows [x; lambda]) at the new problem's segment start times; times
/// outside the trajectory clamp to its ends. A stronger MPC warm start than
/// the block shift when the previous solution is available.
ShootingVars vars_from_trajectories(const std::vector<Trajectory>& member_trajectories,
                                    const ShootingProblem& problem);

}  // namespace pmpc
