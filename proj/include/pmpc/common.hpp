#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Invalid arguments or misuse of an interface.
class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Base for runtime numerical failures.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An ODE right-hand side produced a non-finite value.
class DivergenceError : public NumericalError {
public:
  DivergenceError(const std::string& msg, double t, VectorXd last_state)
      : NumericalError(msg), time(t), state(std::move(last_state)) {}
  double time;
  VectorXd state;
};

/// An iterative procedure ran out of budget; carries the last valid iterate.
class NonConvergenceError : public NumericalError {
public:
  NonConvergenceError(const std::string& msg, double t, VectorXd last_state)
      : NumericalError(msg), time(t), state(std::move(last_state)) {}
  double time;
  VectorXd state;
};

}  // namespace pmpc
