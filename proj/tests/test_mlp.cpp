#include <doctest.h>

#include <cmath>
#include <vector>

#include "pmpc/mlp.hpp"
#include "pmpc/rng.hpp"
#include "test_utils.hpp"

using namespace pmpc;
using pmpc_test::fd_jacobian;
using pmpc_test::rel_error;

namespace {

/// Independent scalar-by-scalar reimplementation of the forward pass used
/// as a duplicate-implementation oracle.
std::vector<double> naive_forward(const NetConfig& config, const VectorXd& theta,
                                  const std::vector<double>& input) {
  std::vector<double> cur = input;
  int offset = 0;
  const int n_layers = config.n_affine();
  for (int l = 0; l < n_layers; ++l) {
    const int n_in = config.layer_sizes[size_t(l)];
    const int n_out = config.layer_sizes[size_t(l) + 1];
    std::vector<double> next(size_t(n_out), 0.0);
    // weights are stored column-major: theta[offset + r + c * n_out]
    for (int c = 0; c < n_in; ++c)
      for (int r = 0; r < n_out; ++r) next[size_t(r)] += theta[offset + r + c * n_out] * cur[size_t(c)];
    offset += n_in * n_out;
    const bool has_bias = (l + 1 < n_layers) || config.output_bias;
    if (has_bias) {
      for (int r = 0; r < n_out; ++r) next[size_t(r)] += theta[offset + r];
      offset += n_out;
    }
    if (l + 1 < n_layers)
      for (double& v : next) v = std::tanh(v);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

TEST_CASE("parameter counts match the published architectures") {
  NetConfig vdp_net = NetConfig::mlp(2, 1);  // [3, 32, 32, 2]
  CHECK(count_params(vdp_net) == 1248);
  NetConfig cartpole_net = NetConfig::mlp(4, 1);  // [5, 32, 32, 4]
  CHECK(count_params(cartpole_net) == 1376);

  NetConfig tiny;
  tiny.layer_sizes = {1, 1, 1};
  CHECK(count_params(tiny) == 3);  // 1*1 + 1 bias + 1*1
}

TEST_CASE("zero parameters give the zero map and zero jacobians") {
  NetConfig net = NetConfig::mlp(2, 1);
  VectorXd theta = VectorXd::Zero(count_params(net));
  const VectorXd x = (VectorXd(2) << 0.3, -0.8).finished();
  const VectorXd u = VectorXd::Constant(1, 0.5);
  CHECK(mlp_forward(net, theta, x, u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mlp_jac_x(net, theta, x, u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mlp_jac_u(net, theta, x, u).cwiseAbs().maxCoeff() == 0.0);

  MlpModel model(net, theta);
  CHECK(model.f(x, u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a single linear layer reproduces W z exactly") {
  NetConfig net;
  net.layer_sizes = {3, 2};
  REQUIRE(count_params(net) == 6);
  Rng rng(3);
  VectorXd theta = rng.uniform_vector(6, -1.0, 1.0);
  Eigen::Map<const MatrixXd> w(theta.data(), 2, 3);
  const VectorXd x = rng.uniform_vector(2, -1.0, 1.0);
  const VectorXd u = rng.uniform_vector(1, -1.0, 1.0);
  VectorXd z(3);
  z << x, u;
  CHECK((mlp_forward(net, theta, x, u) - w * z).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((mlp_jac_x(net, theta, x, u) - w.leftCols(2)).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((mlp_jac_u(net, theta, x, u) - w.rightCols(1)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("forward pass matches a scalar reimplementation on random nets") {
  NetConfig net = NetConfig::mlp(2, 1);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd theta = init_params(net, 100 + std::uint64_t(trial));
    Rng rng(200 + std::uint64_t(trial));
    const VectorXd x = rng.uniform_vector(2, -2.0, 2.0);
    const VectorXd u = rng.uniform_vector(1, -2.0, 2.0);
    const VectorXd out = mlp_forward(net, theta, x, u);
    const std::vector<double> ref = naive_forward(net, theta, {x[0], x[1], u[0]});
    for (int i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("jacobians match central finite differences on random nets") {
  for (const auto& dims : {std::pair<int, int>{2, 1}, {4, 1}}) {
    NetConfig net = NetConfig::mlp(dims.first, dims.second);
    for (int trial = 0; trial < 5; ++trial) {
      VectorXd theta = init_params(net, 31 + std::uint64_t(trial));
      MlpModel model(net, theta);
      CHECK(pmpc_test::check_model_jacobians(model, 50, 900 + std::uint64_t(trial)) < 1e-5);
    }
  }
}

TEST_CASE("parameter gradient: zero residual batch gives zero gradient") {
  NetConfig net = NetConfig::mlp(2, 1);
  VectorXd theta = init_params(net, 5);
  Rng rng(6);
  MatrixXd X = MatrixXd::Random(2, 7), U = MatrixXd::Random(1, 7);
  MatrixXd targets(2, 7);
  for (int j = 0; j < 7; ++j)
    targets.col(j) = mlp_forward(net, theta, X.col(j), U.col(j));
  VectorXd grad;
  const double loss = mlp_param_grad(net, theta, X, U, targets, grad);
  CHECK(loss <= 1e-28);
  CHECK(grad.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("parameter gradient matches finite differences on random coordinates") {
  NetConfig net = NetConfig::mlp(2, 1);
  VectorXd theta = init_params(net, 77);
  Rng rng(78);
  MatrixXd X = MatrixXd::Random(2, 9), U = MatrixXd::Random(1, 9), targets = MatrixXd::Random(2, 9);
  VectorXd grad;
  mlp_param_grad(net, theta, X, U, targets, grad);

  auto loss_at = [&](const VectorXd& th) {
    double acc = 0.0;
    for (int j = 0; j < X.cols(); ++j) {
      const VectorXd err = mlp_forward(net, th, X.col(j), U.col(j)) - targets.col(j);
      acc += 0.5 * err.squaredNorm();
    }
    return acc / double(X.cols());
  };
  for (int k = 0; k < 20; ++k) {
    const int idx = rng.uniform_int(int(theta.size()));
    const double fd = pmpc_test::fd_gradient_entry(loss_at, theta, idx, 1e-6);
    const double scale = std::max({1.0, std::abs(fd), std::abs(grad[idx])});
    CHECK(std::abs(grad[idx] - fd) / scale <= 1e-5);
  }
}

TEST_CASE("linear net gradient of ||f(z)||^2/2 is f(z) z^T flattened") {
  NetConfig net;
  net.layer_sizes = {3, 2};
  Rng rng(9);
  VectorXd theta = rng.uniform_vector(6, -1.0, 1.0);
  VectorXd x = rng.uniform_vector(2, -1.0, 1.0);
  VectorXd u = rng.uniform_vector(1, -1.0, 1.0);
  VectorXd z(3);
  z << x, u;
  const VectorXd fz = mlp_forward(net, theta, x, u);

  VectorXd grad;
  MatrixXd targets = MatrixXd::Zero(2, 1);
  mlp_param_grad(net, theta, MatrixXd(x), MatrixXd(u), targets, grad);
  const MatrixXd expected = fz * z.transpose();  // column-major flattening
  Eigen::Map<const MatrixXd> got(grad.data(), 2, 3);
  CHECK(rel_error(got, expected) <= 1e-12);
}

TEST_CASE("initialization is deterministic per seed with Glorot variance") {
  NetConfig net = NetConfig::mlp(2, 1);
  const VectorXd a = init_params(net, 42);
  const VectorXd b = init_params(net, 42);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  const VectorXd c = init_params(net, 43);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);

  // empirical variance of the 32x32 block within 20% of 2/(fan_in+fan_out)
  const MlpLayout layout(net);
  const auto& mid = layout.layers[1];
  Eigen::Map<const MatrixXd> w(a.data() + mid.w_offset, mid.rows, mid.cols);
  const double var = w.array().square().mean() - std::pow(w.array().mean(), 2);
  const double expected = 2.0 / double(mid.rows + mid.cols);
  CHECK(var >= 0.8 * expected);
  CHECK(var <= 1.2 * expected);

  // biases start at zero
  CHECK(a.segment(mid.b_offset, mid.rows).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batched forward agrees with per-sample forward") {
  NetConfig net = NetConfig::mlp(2, 1);
  VectorXd theta = init_params(net, 55);
  MatrixXd Z = MatrixXd::Random(3, 17);
  MatrixXd out;
  mlp_forward_batch(net, theta, Z, out);
  MlpScratch scratch;
  VectorXd one(2);
  for (int j = 0; j < Z.cols(); ++j) {
    mlp_forward_into(net, theta, VectorXd(Z.col(j)), one, scratch);
    CHECK((out.col(j) - one).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("outputs stay finite on large bounded inputs") {
  NetConfig net = NetConfig::mlp(2, 1);
  VectorXd theta = init_params(net, 91);
  Rng rng(92);
  for (int i = 0; i < 100; ++i) {
    VectorXd x = rng.uniform_vector(2, -1e3, 1e3);
    VectorXd u = rng.uniform_vector(1, -1e3, 1e3);
    CHECK(mlp_forward(net, theta, x, u).allFinite());
  }
}

TEST_CASE("single-member ensemble evaluation is bit-identical to the member") {
  NetConfig net = NetConfig::mlp(2, 1);
  Ensemble ens;
  ens.config = net;
  ens.members = {init_params(net, 7)};
  const ModelList models = ens.as_models();
  REQUIRE(models.size() == 1);
  const VectorXd x = (VectorXd(2) << 0.2, -1.1).finished();
  const VectorXd u = VectorXd::Constant(1, 0.4);
  const VectorXd direct = mlp_forward(net, ens.members[0], x, u);
  const VectorXd via_model = models[0]->f(x, u, 0.0);
  CHECK((direct - via_model).cwiseAbs().maxCoeff() == 0.0);
}
