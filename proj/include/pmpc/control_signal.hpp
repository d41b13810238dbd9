#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "pmpc/common.hpp"

namespace pmpc {

enum class Interpolation { cubic, zero_order_hold };

/// Continuous-time control function defined by values at knot times.
/// Cubic mode uses a natural cubic spline per control dimension; evaluation
/// outside the knot range clamps to the boundary knot value.
class ControlSignal {
public:
  ControlSignal() = default;

  /// times: strictly increasing, one column of values per knot.
  ControlSignal(VectorXd times, MatrixXd values,
                Interpolation interp = Interpolation::cubic);

  /// Constant signal over [t0, t1].
  static ControlSignal constant(const VectorXd& u, double t0, double t1);

  int dim() const { return int(values_.rows()); }
  int knots() const { return int(times_.size()); }
  bool empty() const { return times_.size() == 0; }
  double t_begin() const { return times_[0]; }
  double t_end() const { return times_[times_.size() - 1]; }

  const VectorXd& knot_times() const { return times_; }
  const MatrixXd& knot_values() const { return values_; }
  Interpolation interpolation() const { return interp_; }

  void eval_into(double t, Eigen::Ref<VectorXd> out) const;
  VectorXd eval(double t) const;
  VectorXd operator()(double t) const { return eval(t); }

  /// First derivative of the interpolant (zero for zero-order hold).
  VectorXd deriv(double t) const;

private:
  int interval(double t) const;

  VectorXd times_;
  MatrixXd values_;        // dim x knots
  MatrixXd second_derivs_; // dim x knots, natural spline curvatures
  Interpolation interp_ = Interpolation::cubic;
};

/// Natural-spline curvatures for one sequence of samples. Exposed for reuse
/// by the cardinal-basis construction in the planners.
VectorXd natural_spline_second_derivs(const VectorXd& times, const VectorXd& values);

/// Matrix B with B(i, j) = phi_j(eval_times[i]) where phi_j is the natural
/// cubic spline through the knot grid interpolating the j-th unit vector.
/// Interpolation at the knots is then values^T * B^T; the map knots -> signal
/// values is linear, which the direct planners exploit.
MatrixXd spline_basis_matrix(const VectorXd& knot_times, const VectorXd& eval_times);

struct SchroederOptions {
  int dim = 1;
  double duration = -1.0;  // <= 0: one period
  double knot_dt = -1.0;   // <= 0: period / (64 * n_harmonics)
};

/// Multi-harmonic periodic excitation with low crest factor. Phases follow
/// the Schroeder rule phi_k = -pi k (k-1) / K; a per-trial time shift and
/// per-harmonic amplitude jitter are drawn from the seed, and the result is
/// rescaled so the dense-grid maximum of |u| equals `amplitude` per dim.
ControlSignal schroeder_sweep(double amplitude, int n_harmonics, double period,
                              std::uint64_t seed, const SchroederOptions& opts = {});

}  // namespace pmpc
