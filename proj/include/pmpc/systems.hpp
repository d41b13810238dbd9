#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "pmpc/common.hpp"

namespace pmpc {

/// Controlled vector field with exact Jacobians. Implementations are
/// stateless with respect to evaluation and safe to call concurrently.
class DynamicsModel {
public:
  virtual ~DynamicsModel() = default;

  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;

  virtual void eval_f(const VectorXd& x, const VectorXd& u, double t,
                      Eigen::Ref<VectorXd> out) const = 0;
  virtual void eval_jac_x(const VectorXd& x, const VectorXd& u, double t,
                          Eigen::Ref<MatrixXd> out) const = 0;
  virtual void eval_jac_u(const VectorXd& x, const VectorXd& u, double t,
                          Eigen::Ref<MatrixXd> out) const = 0;

  /// One-pass value + both Jacobians; overridden where sharing work helps.
  virtual void eval_with_jacobians(const VectorXd& x, const VectorXd& u, double t,
                                   Eigen::Ref<VectorXd> f, Eigen::Ref<MatrixXd> jx,
                                   Eigen::Ref<MatrixXd> ju) const {
    eval_f(x, u, t, f);
    eval_jac_x(x, u, t, jx);
    eval_jac_u(x, u, t, ju);
  }

  VectorXd f(const VectorXd& x, const VectorXd& u, double t = 0.0) const {
    VectorXd out(state_dim());
    eval_f(x, u, t, out);
    return out;
  }
  MatrixXd jac_x(const VectorXd& x, const VectorXd& u, double t = 0.0) const {
    MatrixXd out(state_dim(), state_dim());
    eval_jac_x(x, u, t, out);
    return out;
  }
  MatrixXd jac_u(const VectorXd& x, const VectorXd& u, double t = 0.0) const {
    MatrixXd out(state_dim(), control_dim());
    eval_jac_u(x, u, t, out);
    return out;
  }
};

using ModelPtr = std::shared_ptr<const DynamicsModel>;
using ModelList = std::vector<ModelPtr>;

struct VanDerPolParams {
  double mu = 1.5;
};

/// x1' = mu (x2 - x1^3/3 + x1), x2' = -x1 + u. The origin is an unstable
/// focus surrounded by the attracting limit cycle.
class VanDerPol : public DynamicsModel {
public:
  explicit VanDerPol(VanDerPolParams p = {}) : p_(p) {
    if (!(p_.mu > 0.0)) throw UsageError("VanDerPol: mu must be positive");
  }
  int state_dim() const override { return 2; }
  int control_dim() const override { return 1; }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;

private:
  VanDerPolParams p_;
};

struct CartPoleParams {
  double pole_half_length = 1.0;
  double pole_mass = 1.0;
  double cart_mass = 1.0;
  double gravity = 9.81;
};

/// State (x, theta, xdot, thetadot); theta = pi is the upright position and
/// u is the horizontal force on the cart.
class CartPole : public DynamicsModel {
public:
  explicit CartPole(CartPoleParams p = {}) : p_(p) {
    if (!(p_.pole_half_length > 0.0 && p_.pole_mass > 0.0 && p_.cart_mass > 0.0))
      throw UsageError("CartPole: masses and length must be positive");
  }
  int state_dim() const override { return 4; }
  int control_dim() const override { return 1; }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;

private:
  CartPoleParams p_;
};

struct DuffingParams {
  double alpha = -1.0;
  double beta = 2.0;
  double delta = 0.2;
  double gamma = 1.0;
};

/// x1' = x2, x2' = -delta x2 - alpha x1 - beta x1^3 + gamma u.
class Duffing : public DynamicsModel {
public:
  explicit Duffing(DuffingParams p = {}) : p_(p) {
    if (!(p_.beta > 0.0)) throw UsageError("Duffing: beta must be positive (double well)");
  }
  int state_dim() const override { return 2; }
  int control_dim() const override { return 1; }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;

private:
  DuffingParams p_;
};

/// Scalar demo system f(x, u) = theta sin(x) + u.
class SineDemo : public DynamicsModel {
public:
  explicit SineDemo(double theta = 1.0) : theta_(theta) {}
  int state_dim() const override { return 1; }
  int control_dim() const override { return 1; }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;

private:
  double theta_;
};

/// xdot = A x + B u.
class LinearSystem : public DynamicsModel {
public:
  LinearSystem(MatrixXd A, MatrixXd B) : A_(std::move(A)), B_(std::move(B)) {
    if (A_.rows() != A_.cols() || B_.rows() != A_.rows())
      throw UsageError("LinearSystem: inconsistent dimensions");
  }
  /// Double integrator: A = [[0,1],[0,0]], B = [0,1]^T.
  static LinearSystem double_integrator();

  int state_dim() const override { return int(A_.rows()); }
  int control_dim() const override { return int(B_.cols()); }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }

private:
  MatrixXd A_, B_;
};

/// Systems by name: "vdp", "cartpole", "duffing", "sine_demo", "linear"
/// (the latter defaults to the double integrator).
ModelPtr make_system(const std::string& name);

}  // namespace pmpc
