#include "pmpc/systems.hpp"

#include <cmath>

namespace pmpc {

void VanDerPol::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  // Lienard form with the unstable origin and attracting limit cycle
  out[0] = p_.mu * (x[1] - x[0] * x[0] * x[0] / 3.0 + x[0]);
  out[1] = -x[0] + u[0];
}

void VanDerPol::eval_jac_x(const VectorXd& x, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = p_.mu * (1.0 - x[0] * x[0]);
  out(0, 1) = p_.mu;
  out(1, 0) = -1.0;
  out(1, 1) = 0.0;
}

void VanDerPol::eval_jac_u(const VectorXd&, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = 0.0;
  out(1, 0) = 1.0;
}

void CartPole::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  const double l = p_.pole_half_length, m = p_.pole_mass, mc = p_.cart_mass, g = p_.gravity;
  const double s = std::sin(x[1]), c = std::cos(x[1]);
  const double w = x[3], f = u[0];
  const double den = mc + m * (1.0 - c * c);
  out[0] = x[2];
  out[1] = w;
  out[2] = (l * m * s * w * w + f + m * g * c * s) / den;
  out[3] = -(l * m * c * s * w * w + f * c + (mc + m) * g * s) / (l * den);
}

void CartPole::eval_jac_x(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<MatrixXd> out) const {
  const double l = p_.pole_half_length, m = p_.pole_mass, mc = p_.cart_mass, g = p_.gravity;
  const double s = std::sin(x[1]), c = std::cos(x[1]);
  const double w = x[3], f = u[0];
  const double den = mc + m * (1.0 - c * c);
  const double dden = 2.0 * m * s * c;

  out.setZero();
  out(0, 2) = 1.0;
  out(1, 3) = 1.0;

  const double n2 = l * m * s * w * w + f + m * g * c * s;
  const double dn2 = l * m * c * w * w + m * g * (c * c - s * s);
  out(2, 1) = (dn2 * den - n2 * dden) / (den * den);
  out(2, 3) = 2.0 * l * m * s * w / den;

  const double n3 = l * m * c * s * w * w + f * c + (mc + m) * g * s;
  const double dn3 = l * m * (c * c - s * s) * w * w - f * s + (mc + m) * g * c;
  out(3, 1) = -(dn3 * (l * den) - n3 * (l * dden)) / (l * den * l * den);
  out(3, 3) = -2.0 * l * m * c * s * w / (l * den);
}

void CartPole::eval_jac_u(const VectorXd& x, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  const double l = p_.pole_half_length, m = p_.pole_mass, mc = p_.cart_mass;
  const double s = std::sin(x[1]), c = std::cos(x[1]);
  const double den = mc + m * (1.0 - c * c);
  out(0, 0) = 0.0;
  out(1, 0) = 0.0;
  out(2, 0) = 1.0 / den;
  out(3, 0) = -c / (l * den);
}

void Duffing::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  out[0] = x[1];
  out[1] = -p_.delta * x[1] - p_.alpha * x[0] - p_.beta * x[0] * x[0] * x[0] + p_.gamma * u[0];
}

void Duffing::eval_jac_x(const VectorXd& x, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = 0.0;
  out(0, 1) = 1.0;
  out(1, 0) = -p_.alpha - 3.0 * p_.beta * x[0] * x[0];
  out(1, 1) = -p_.delta;
}

void Duffing::eval_jac_u(const VectorXd&, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = 0.0;
  out(1, 0) = p_.gamma;
}

void SineDemo::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  out[0] = theta_ * std::sin(x[0]) + u[0];
}

void SineDemo::eval_jac_x(const VectorXd& x, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = theta_ * std::cos(x[0]);
}

void SineDemo::eval_jac_u(const VectorXd&, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out(0, 0) = 1.0;
}

LinearSystem LinearSystem::double_integrator() {
  MatrixXd a(2, 2), b(2, 1);
  a << 0, 1, 0, 0;
  b << 0, 1;
  return LinearSystem(a, b);
}

void LinearSystem::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  out.noalias() = A_ * x;
  out.noalias() += B_ * u;
}

void LinearSystem::eval_jac_x(const VectorXd&, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out = A_;
}

void LinearSystem::eval_jac_u(const VectorXd&, const VectorXd&, double, Eigen::Ref<MatrixXd> out) const {
  out = B_;
}

ModelPtr make_system(const std::string& name) {
  if (name == "vdp") return std::make_shared<VanDerPol>();
  if (name == "cartpole") return std::make_shared<CartPole>();
  if (name == "duffing") return std::make_shared<Duffing>();
  if (name == "sine_demo") return std::make_shared<SineDemo>();
  if (name == "linear") return std::make_shared<LinearSystem>(LinearSystem::double_integrator());
  throw UsageError("make_system: unknown system '" + name + "'");
}

}  // namespace pmpc
