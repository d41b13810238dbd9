#pragma once

#include <Eigen/Dense>

#include "pmpc/common.hpp"

namespace pmpc {

/// Quadratic cost L(x,u) = (x-x*)' Q (x-x*) + u' R u with terminal
/// Phi(x) = (x-x*)' Qf (x-x*). Q and Qf must be symmetric PSD, R symmetric PD.
class QuadraticCost {
public:
  QuadraticCost(MatrixXd Q, MatrixXd Qf, MatrixXd R, VectorXd x_star);

  static QuadraticCost diagonal(const VectorXd& q, const VectorXd& qf, const VectorXd& r,
                                const VectorXd& x_star);

  double running(const VectorXd& x, const VectorXd& u) const {
    const VectorXd e = x - x_star_;
    return e.dot(Q_ * e) + u.dot(R_ * u);
  }
  double state_cost(const VectorXd& x) const {
    const VectorXd e = x - x_star_;
    return e.dot(Q_ * e);
  }
  VectorXd grad_x_running(const VectorXd& x) const { return 2.0 * (Q_ * (x - x_star_)); }
  VectorXd grad_u_running(const VectorXd& u) const { return 2.0 * (R_ * u); }

  double terminal(const VectorXd& x) const {
    const VectorXd e = x - x_star_;
    return e.dot(Qf_ * e);
  }
  VectorXd grad_terminal(const VectorXd& x) const { return 2.0 * (Qf_ * (x - x_star_)); }

  /// Solves R y = v (used by the pointwise Hamiltonian minimizer).
  VectorXd solve_R(const VectorXd& v) const { return R_llt_.solve(v); }

  const MatrixXd& Q() const { return Q_; }
  const MatrixXd& Qf() const { return Qf_; }
  const MatrixXd& R() const { return R_; }
  const VectorXd& x_star() const { return x_star_; }
  int state_dim() const { return int(Q_.rows()); }
  int control_dim() const { return int(R_.rows()); }

private:
  MatrixXd Q_, Qf_, R_;
  VectorXd x_star_;
  Eigen::LLT<MatrixXd> R_llt_;
};

/// Per-dimension box of admissible controls.
struct ControlBounds {
  VectorXd lo, hi;

  ControlBounds(VectorXd lower, VectorXd upper) : lo(std::move(lower)), hi(std::move(upper)) {
    if (lo.size() != hi.size()) throw UsageError("ControlBounds: dimension mismatch");
    for (int i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw UsageError("ControlBounds: need lo < hi per dimension");
  }
  static ControlBounds uniform(double lower, double upper, int dim) {
    return ControlBounds(VectorXd::Constant(dim, lower), VectorXd::Constant(dim, upper));
  }
  static ControlBounds unbounded(int dim, double big = 1e12) {
    return uniform(-big, big, dim);
  }

  int dim() const { return int(lo.size()); }
  VectorXd clamp(const VectorXd& u) const { return u.cwiseMax(lo).cwiseMin(hi); }
  void clamp_in_place(Eigen::Ref<VectorXd> u) const { u = u.cwiseMax(lo).cwiseMin(hi); }
  bool contains(const VectorXd& u) const {
    return (u.array() >= lo.array()).all() && (u.array() <= hi.array()).all();
  }
  bool interior(const VectorXd& u, double margin) const {
    return (u.array() > lo.array() + margin).all() && (u.array() < hi.array() - margin).all();
  }
};

}  // namespace pmpc
