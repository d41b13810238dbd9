#include "pmpc/cost.hpp"

namespace pmpc {

namespace {

void check_symmetric_psd(const MatrixXd& m, const char* name) {
  if (m.rows() != m.cols()) throw UsageError(std::string(name) + " must be square");
  if ((m - m.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * (1.0 + m.lpNorm<Eigen::Infinity>()))
    throw UsageError(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + m.lpNorm<Eigen::Infinity>()))
    throw UsageError(std::string(name) + " must be positive semi-definite");
}

}  // namespace

QuadraticCost::QuadraticCost(MatrixXd Q, MatrixXd Qf, MatrixXd R, VectorXd x_star)
    : Q_(std::move(Q)), Qf_(std::move(Qf)), R_(std::move(R)), x_star_(std::move(x_star)) {
  check_symmetric_psd(Q_, "Q");
  check_symmetric_psd(Qf_, "Qf");
  if (Q_.rows() != Qf_.rows() || Q_.rows() != x_star_.size())
    throw UsageError("QuadraticCost: state dimension mismatch");
  if (R_.rows() != R_.cols()) throw UsageError("R must be square");
  if ((R_ - R_.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * (1.0 + R_.lpNorm<Eigen::Infinity>()))
    throw UsageError("R must be symmetric");
  R_llt_.compute(R_);
  if (R_llt_.info() != Eigen::Success) throw UsageError("R must be positive definite");
}

QuadraticCost QuadraticCost::diagonal(const VectorXd& q, const VectorXd& qf, const VectorXd& r,
                                      const VectorXd& x_star) {
  return QuadraticCost(MatrixXd(q.asDiagonal()), MatrixXd(qf.asDiagonal()),
                       MatrixXd(r.asDiagonal()), x_star);
}

}  // namespace pmpc
