#include <doctest.h>

#include <cmath>

#include "pmpc/hamiltonian.hpp"
#include "pmpc/mlp.hpp"
#include "pmpc/rng.hpp"
#include "pmpc/systems.hpp"
#include "test_utils.hpp"

using namespace pmpc;

namespace {

QuadraticCost vdp_cost() {
  return QuadraticCost::diagonal(VectorXd::Ones(2), VectorXd::Ones(2),
                                 VectorXd::Constant(1, 0.5), VectorXd::Zero(2));
}

HamiltonianContext random_context(int d, int members, std::uint64_t seed) {
  Rng rng(seed);
  HamiltonianContext ctx;
  ctx.states.resize(d, members);
  ctx.costates.resize(d, members);
  for (int i = 0; i < members; ++i) {
    ctx.states.col(i) = rng.uniform_vector(d, -1.5, 1.5);
    ctx.costates.col(i) = rng.uniform_vector(d, -2.0, 2.0);
  }
  return ctx;
}

ModelList random_mlp_models(int d_x, int d_u, int members, std::uint64_t seed) {
  NetConfig net = NetConfig::mlp(d_x, d_u);
  ModelList models;
  for (int i = 0; i < members; ++i)
    models.push_back(std::make_shared<MlpModel>(net, init_params(net, seed + std::uint64_t(i))));
  return models;
}

}  // namespace

TEST_CASE("running cost values and gradients") {
  QuadraticCost cost = vdp_cost();
  CHECK(cost.running(VectorXd::Zero(2), VectorXd::Zero(1)) == 0.0);

  // x=(1,1), u=1, Q=I, R=0.5: 1 + 1 + 0.5
  const VectorXd x = (VectorXd(2) << 1, 1).finished();
  const VectorXd u = VectorXd::Ones(1);
  CHECK(cost.running(x, u) == doctest::Approx(2.5));
  CHECK(cost.grad_u_running(VectorXd::Zero(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cost.grad_x_running(x) - 2.0 * x).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("terminal cost values and gradient") {
  const VectorXd x_star = (VectorXd(4) << 1.0, M_PI, 0.0, 0.0).finished();
  QuadraticCost cost = QuadraticCost::diagonal(
      (VectorXd(4) << 1, 1, 0.1, 0.1).finished(), (VectorXd(4) << 1, 5, 1, 1).finished(),
      VectorXd::Constant(1, 0.05), x_star);
  CHECK(cost.terminal(x_star) == 0.0);
  CHECK(cost.grad_terminal(x_star).cwiseAbs().maxCoeff() == 0.0);

  VectorXd x = x_star;
  x[1] += 0.1;
  CHECK(cost.terminal(x) == doctest::Approx(0.05));
  const VectorXd grad = cost.grad_terminal(x);
  CHECK(grad[1] == doctest::Approx(1.0));
  CHECK(std::abs(grad[0]) + std::abs(grad[2]) + std::abs(grad[3]) <= 1e-15);

  // finite differences
  for (int j = 0; j < 4; ++j) {
    const double fd = pmpc_test::fd_gradient_entry(
        [&](const VectorXd& xx) { return cost.terminal(xx); }, x, j, 1e-6);
    CHECK(std::abs(grad[j] - fd) <= 1e-7);
  }
}

TEST_CASE("cost matrix validation") {
  MatrixXd q = MatrixXd::Identity(2, 2);
  MatrixXd r_bad = -MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(QuadraticCost(q, q, r_bad, VectorXd::Zero(2)), UsageError);
  MatrixXd q_asym(2, 2);
  q_asym << 1, 0.5, -0.5, 1;
  CHECK_THROWS_AS(QuadraticCost(q_asym, q, MatrixXd::Identity(1, 1), VectorXd::Zero(2)),
                  UsageError);
}

TEST_CASE("hamiltonian = running cost + costate dot dynamics") {
  SineDemo demo(1.0);
  QuadraticCost cost = QuadraticCost::diagonal(VectorXd::Ones(1), VectorXd::Ones(1),
                                               VectorXd::Ones(1), VectorXd::Zero(1));
  const VectorXd x = VectorXd::Constant(1, M_PI / 2);
  const VectorXd u = VectorXd::Zero(1);
  const VectorXd lam = VectorXd::Constant(1, 2.0);
  // L = (pi/2)^2 ~= 2.4674, f = 1, H = L + 2
  CHECK(hamiltonian(demo, cost, x, lam, u, 0.0) ==
        doctest::Approx((M_PI * M_PI / 4.0) + 2.0).epsilon(1e-12));

  // lambda = 0 reduces to the running cost
  CHECK(hamiltonian(demo, cost, x, VectorXd::Zero(1), u, 0.0) ==
        doctest::Approx(cost.running(x, u)));

  // linearity in lambda
  const double h1 = hamiltonian(demo, cost, x, lam, u, 0.0) - cost.running(x, u);
  const double h3 = hamiltonian(demo, cost, x, VectorXd(3.0 * lam), u, 0.0) - cost.running(x, u);
  CHECK(h3 == doctest::Approx(3.0 * h1).epsilon(1e-12));
}

TEST_CASE("mean hamiltonian equals the single member for M=1 and identical members") {
  QuadraticCost cost = vdp_cost();
  ModelList one = {make_system("vdp")};
  HamiltonianContext ctx = random_context(2, 1, 21);
  const VectorXd u = VectorXd::Constant(1, 0.3);
  CHECK(mean_hamiltonian(one, cost, ctx, u) ==
        doctest::Approx(hamiltonian(*one[0], cost, ctx.states.col(0), ctx.costates.col(0), u, 0.0)));

  ModelList same = {make_system("vdp"), make_system("vdp"), make_system("vdp")};
  HamiltonianContext ctx3;
  ctx3.states = ctx.states.col(0).replicate(1, 3);
  ctx3.costates = ctx.costates.col(0).replicate(1, 3);
  CHECK(mean_hamiltonian(same, cost, ctx3, u) ==
        doctest::Approx(mean_hamiltonian(one, cost, ctx, u)).epsilon(1e-14));
}

TEST_CASE("mean hamiltonian matches an explicit loop and is permutation invariant") {
  QuadraticCost cost = vdp_cost();
  ModelList models = random_mlp_models(2, 1, 5, 400);
  HamiltonianContext ctx = random_context(2, 5, 41);
  const VectorXd u = VectorXd::Constant(1, -0.7);

  double acc = 0.0;
  for (int i = 0; i < 5; ++i)
    acc += hamiltonian(*models[size_t(i)], cost, ctx.states.col(i), ctx.costates.col(i), u, 0.0);
  acc /= 5.0;
  CHECK(mean_hamiltonian(models, cost, ctx, u) == doctest::Approx(acc).epsilon(1e-12));

  // permute members together with their contexts
  std::vector<int> perm = {3, 1, 4, 0, 2};
  ModelList permuted;
  HamiltonianContext ctx_p;
  ctx_p.states.resize(2, 5);
  ctx_p.costates.resize(2, 5);
  for (int i = 0; i < 5; ++i) {
    permuted.push_back(models[size_t(perm[size_t(i)])]);
    ctx_p.states.col(i) = ctx.states.col(perm[size_t(i)]);
    ctx_p.costates.col(i) = ctx.costates.col(perm[size_t(i)]);
  }
  CHECK(mean_hamiltonian(permuted, cost, ctx_p, u) ==
        doctest::Approx(mean_hamiltonian(models, cost, ctx, u)).epsilon(1e-13));
}

TEST_CASE("costate rhs: zero at the target with zero costate") {
  QuadraticCost cost = vdp_cost();
  const ModelPtr vdp = make_system("vdp");
  CHECK(costate_rhs(*vdp, cost, VectorXd::Zero(2), VectorXd::Zero(2), VectorXd::Zero(1), 0.0)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("costate rhs equals minus the finite-difference gradient of H in x") {
  QuadraticCost cost = vdp_cost();
  for (const std::string name : {"vdp", "duffing", "sine_demo"}) {
    const ModelPtr model = make_system(name);
    const int d = model->state_dim();
    QuadraticCost c = QuadraticCost::diagonal(VectorXd::Ones(d), VectorXd::Ones(d),
                                              VectorXd::Constant(1, 0.5), VectorXd::Zero(d));
    Rng rng(500);
    for (int p = 0; p < 50; ++p) {
      const VectorXd x = rng.uniform_vector(d, -1.5, 1.5);
      const VectorXd lam = rng.uniform_vector(d, -2.0, 2.0);
      const VectorXd u = rng.uniform_vector(1, -1.0, 1.0);
      const VectorXd rhs = costate_rhs(*model, c, x, lam, u, 0.0);
      for (int j = 0; j < d; ++j) {
        const double fd = pmpc_test::fd_gradient_entry(
            [&](const VectorXd& xx) { return hamiltonian(*model, c, xx, lam, u, 0.0); }, x, j,
            1e-6);
        const double scale = std::max({1.0, std::abs(fd), std::abs(rhs[j])});
        CHECK(std::abs(rhs[j] + fd) / scale <= 1e-5);
      }
    }
  }
}

TEST_CASE("costate rhs on a linear system is the textbook expression") {
  MatrixXd a(2, 2), b(2, 1);
  a << 0.3, -1.2, 0.8, 0.1;
  b << 0.5, 1.0;
  LinearSystem lin(a, b);
  QuadraticCost cost = vdp_cost();
  Rng rng(17);
  const VectorXd x = rng.uniform_vector(2, -1, 1);
  const VectorXd lam = rng.uniform_vector(2, -1, 1);
  const VectorXd expected = -(2.0 * (cost.Q() * x) + a.transpose() * lam);
  const VectorXd got = costate_rhs(lin, cost, x, lam, VectorXd::Zero(1), 0.0);
  CHECK((got - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("pointwise minimizer: control-affine closed form") {
  QuadraticCost cost = vdp_cost();  // R = 0.5
  ModelList vdp = {make_system("vdp")};
  ControlBounds bounds = ControlBounds::uniform(-2.0, 2.0, 1);
  HamiltonianContext ctx = random_context(2, 1, 92);

  // u* = -0.5 R^-1 B^T lambda = -lambda_2 for B=(0,1), R=0.5
  ctx.costates(1, 0) = 0.7;
  VectorXd u = minimize_mean_hamiltonian(vdp, cost, ctx, VectorXd::Zero(1), bounds);
  CHECK(u[0] == doctest::Approx(-0.7).epsilon(1e-9));

  ctx.costates(1, 0) = 5.0;  // clamped at the box
  u = minimize_mean_hamiltonian(vdp, cost, ctx, VectorXd::Zero(1), bounds);
  CHECK(u[0] == doctest::Approx(-2.0));
}

TEST_CASE("pointwise minimizer reaches interior stationarity on MLP ensembles") {
  QuadraticCost cost = vdp_cost();
  ModelList models = random_mlp_models(2, 1, 5, 700);
  ControlBounds bounds = ControlBounds::uniform(-5.0, 5.0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    HamiltonianContext ctx = random_context(2, 5, 800 + std::uint64_t(trial));
    const VectorXd u = minimize_mean_hamiltonian(models, cost, ctx, VectorXd::Zero(1), bounds);
    if (bounds.interior(u, 1e-6)) {
      const VectorXd g = mean_hamiltonian_grad_u(models, cost, ctx, u);
      CHECK(g.lpNorm<Eigen::Infinity>() <= 1e-7);
    }
    // the minimizer never leaves the box
    CHECK(bounds.contains(u));
  }
}

TEST_CASE("grad_u of the mean hamiltonian matches finite differences") {
  QuadraticCost cost = vdp_cost();
  ModelList models = random_mlp_models(2, 1, 3, 910);
  HamiltonianContext ctx = random_context(2, 3, 911);
  Rng rng(912);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd u = rng.uniform_vector(1, -1.5, 1.5);
    const VectorXd g = mean_hamiltonian_grad_u(models, cost, ctx, u);
    const double fd = pmpc_test::fd_gradient_entry(
        [&](const VectorXd& uu) { return mean_hamiltonian(models, cost, ctx, uu); }, u, 0, 1e-6);
    CHECK(std::abs(g[0] - fd) <= 1e-6);
  }
}

TEST_CASE("trajectory cost: zero at an equilibrium on target") {
  // duffing stable attractor as target: f(x*) = 0 under u = 0
  const double s = 1.0 / std::sqrt(2.0);
  const VectorXd x_star = (VectorXd(2) << s, 0.0).finished();
  QuadraticCost cost = QuadraticCost::diagonal(VectorXd::Ones(2), VectorXd::Ones(2),
                                               VectorXd::Ones(1), x_star);
  ControlSignal zero = ControlSignal::constant(VectorXd::Zero(1), 0.0, 2.0);
  const double c = trajectory_cost(*make_system("duffing"), cost, x_star, zero, 0.0, 2.0,
                                   IntegratorConfig::oracle());
  CHECK(std::abs(c) <= 1e-10);
}

TEST_CASE("trajectory cost matches dense trapezoid quadrature") {
  QuadraticCost cost = vdp_cost();
  const ModelPtr vdp = make_system("vdp");
  ControlSignal u_sig = schroeder_sweep(1.0, 4, 2.0, 37);
  const VectorXd x0 = (VectorXd(2) << 0.5, -0.2).finished();
  const double val =
      trajectory_cost(*vdp, cost, x0, u_sig, 0.0, 2.0, IntegratorConfig::oracle());

  // oracle: fine fixed-step rollout + trapezoid rule on the running cost
  VectorXd u(1);
  const OdeRhs rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
    u_sig.eval_into(t, u);
    vdp->eval_f(x, u, t, dx);
  };
  const double h = 1e-4;
  Trajectory traj = integrate_rk4_fixed(rhs, x0, 0.0, 2.0, h);
  double quad = 0.0;
  for (int i = 0; i < traj.size(); ++i) {
    u_sig.eval_into(traj.times[i], u);
    const double l = cost.running(traj.states.col(i), u);
    const bool boundary = (i == 0) || (i + 1 == traj.size());
    quad += (boundary ? 0.5 : 1.0) * l * h;
  }
  quad += cost.terminal(traj.back());
  CHECK(val == doctest::Approx(quad).epsilon(1e-4));
}

TEST_CASE("trajectory cost is monotone in terminal-cost scaling") {
  QuadraticCost cost = vdp_cost();
  QuadraticCost doubled = QuadraticCost::diagonal(VectorXd::Ones(2), VectorXd::Constant(2, 2.0),
                                                  VectorXd::Constant(1, 0.5), VectorXd::Zero(2));
  const ModelPtr vdp = make_system("vdp");
  ControlSignal u_sig = schroeder_sweep(1.0, 4, 3.0, 11);
  const VectorXd x0 = (VectorXd(2) << 1.0, 1.0).finished();
  const double base = trajectory_cost(*vdp, cost, x0, u_sig, 0.0, 3.0, IntegratorConfig{});
  const double more = trajectory_cost(*vdp, doubled, x0, u_sig, 0.0, 3.0, IntegratorConfig{});
  CHECK(more >= base);
}

TEST_CASE("mean over identical members equals the single-model trajectory cost") {
  QuadraticCost cost = vdp_cost();
  ModelList same = {make_system("vdp"), make_system("vdp")};
  ControlSignal u_sig = schroeder_sweep(0.5, 4, 2.0, 3);
  const VectorXd x0 = (VectorXd(2) << 0.4, 0.1).finished();
  double mean = 0.0;
  for (const auto& m : same)
    mean += trajectory_cost(*m, cost, x0, u_sig, 0.0, 2.0, IntegratorConfig{}) / 2.0;
  const double single =
      trajectory_cost(*same[0], cost, x0, u_sig, 0.0, 2.0, IntegratorConfig{});
  CHECK(mean == doctest::Approx(single).epsilon(1e-14));
}
