#include <doctest.h>

#include <cmath>

#include "pmpc/planners.hpp"
#include "pmpc/mlp.hpp"
#include "pmpc/rng.hpp"
#include "pmpc/shooting.hpp"
#include "test_utils.hpp"

using namespace pmpc;

namespace {

QuadraticCost vdp_cost() {
  return QuadraticCost::diagonal(VectorXd::Ones(2), VectorXd::Ones(2),
                                 VectorXd::Constant(1, 0.5), VectorXd::Zero(2));
}

BatchObjective wrap(const Objective& f) {
  return [f](const MatrixXd& candidates) {
    VectorXd costs(candidates.cols());
    for (int p = 0; p < candidates.cols(); ++p) costs[p] = f(candidates.col(p));
    return costs;
  };
}

}  // namespace

TEST_CASE("icem: best-so-far cost is non-increasing across iterations") {
  Rng rng(4);
  const VectorXd target = rng.uniform_vector(8, -1.0, 1.0);
  const Objective f = [&](const VectorXd& x) { return (x - target).squaredNorm(); };
  IcemConfig cfg;
  cfg.iterations = 25;
  IcemResult result = icem_plan(wrap(f), ControlBounds::uniform(-2, 2, 1), 8, cfg, 77);
  for (int i = 1; i < result.best_cost_per_iteration.size(); ++i)
    CHECK(result.best_cost_per_iteration[i] <= result.best_cost_per_iteration[i - 1]);
}

TEST_CASE("icem recovers the minimum of a convex quadratic") {
  Rng rng(5);
  const VectorXd target = rng.uniform_vector(6, -1.0, 1.0);
  const Objective f = [&](const VectorXd& x) { return (x - target).squaredNorm(); };
  IcemConfig cfg;
  cfg.iterations = 30;
  cfg.min_std = 0.01;
  IcemResult result = icem_plan(wrap(f), ControlBounds::uniform(-2, 2, 1), 6, cfg, 99);
  CHECK((result.knots - target).lpNorm<Eigen::Infinity>() <= 10.0 * cfg.min_std);
}

TEST_CASE("icem is deterministic per seed and stays inside the bounds") {
  const Objective f = [](const VectorXd& x) { return x.squaredNorm() - 3.0 * x[0]; };
  IcemConfig cfg;
  cfg.iterations = 10;
  ControlBounds bounds = ControlBounds::uniform(-0.5, 0.5, 1);
  IcemResult a = icem_plan(wrap(f), bounds, 5, cfg, 2024);
  IcemResult b = icem_plan(wrap(f), bounds, 5, cfg, 2024);
  CHECK((a.knots - b.knots).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.cost == b.cost);
  for (int i = 0; i < a.knots.size(); ++i) {
    CHECK(a.knots[i] >= -0.5);
    CHECK(a.knots[i] <= 0.5);
  }
  IcemResult c = icem_plan(wrap(f), bounds, 5, cfg, 2025);
  CHECK((a.knots - c.knots).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("colored noise: beta=2 is smoother than white noise") {
  Rng rng(31);
  const int n = 64;
  double var_acc = 0.0;
  double corr_white = 0.0, corr_pink = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const VectorXd white = colored_noise(n, 0.0, rng);
    const VectorXd pink = colored_noise(n, 2.0, rng);
    var_acc += pink.squaredNorm() / double(n);
    for (int i = 0; i + 1 < n; ++i) {
      corr_white += white[i] * white[i + 1];
      corr_pink += pink[i] * pink[i + 1];
    }
  }
  CHECK(var_acc / reps == doctest::Approx(1.0).epsilon(0.2));
  CHECK(corr_pink > corr_white);
}

TEST_CASE("adam planner converges on a convex quadratic") {
  Rng rng(6);
  const VectorXd target = rng.uniform_vector(5, -0.8, 0.8);
  const ObjectiveWithGrad fg = [&](const VectorXd& x, VectorXd& g) {
    g = 2.0 * (x - target);
    return (x - target).squaredNorm();
  };
  GradPlanConfig cfg;
  cfg.iterations = 200;
  cfg.learning_rate = 0.05;
  PlanResultKnots result = adam_plan(fg, ControlBounds::uniform(-2, 2, 1), 5, cfg,
                                     VectorXd::Zero(5));
  CHECK((result.knots - target).lpNorm<Eigen::Infinity>() <= 1e-3);
}

TEST_CASE("adam planner returns the initial point when already stationary") {
  const ObjectiveWithGrad fg = [](const VectorXd& x, VectorXd& g) {
    g = VectorXd::Zero(x.size());
    return 1.0;
  };
  GradPlanConfig cfg;
  cfg.iterations = 50;
  const VectorXd init = VectorXd::Constant(3, 0.25);
  PlanResultKnots result = adam_plan(fg, ControlBounds::uniform(-1, 1, 1), 3, cfg, init);
  CHECK((result.knots - init).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bfgs reaches a stationary point of the rosenbrock objective") {
  const ObjectiveWithGrad fg = [](const VectorXd& x, VectorXd& g) {
    const double a = 1.0, b = 100.0;
    g.resize(2);
    g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
    g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
    return std::pow(a - x[0], 2) + b * std::pow(x[1] - x[0] * x[0], 2);
  };
  BfgsConfig cfg;
  cfg.iterations = 300;
  VectorXd init(2);
  init << -1.2, 1.0;
  PlanResultKnots result = bfgs_plan(fg, ControlBounds::uniform(-5, 5, 1), 2, cfg, init);
  VectorXd g(2);
  fg(result.knots, g);
  CHECK(g.lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK((result.knots - VectorXd::Ones(2)).lpNorm<Eigen::Infinity>() <= 1e-5);
}

TEST_CASE("bfgs terminates quickly on quadratics") {
  const int n = 4;
  MatrixXd a(n, n);
  a.setZero();
  a.diagonal() << 1.0, 1.6, 2.2, 3.0;
  const VectorXd target = (VectorXd(4) << 0.4, -0.3, 0.2, -0.1).finished();
  int evals = 0;
  const ObjectiveWithGrad fg = [&](const VectorXd& x, VectorXd& g) {
    ++evals;
    g = 2.0 * a * (x - target);
    return (x - target).dot(a * (x - target));
  };
  BfgsConfig cfg;
  cfg.iterations = n + 5;
  PlanResultKnots result = bfgs_plan(fg, ControlBounds::uniform(-2, 2, 1), n, cfg,
                                     VectorXd::Zero(n));
  CHECK((result.knots - target).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("mean cost objective is the member average of trajectory costs") {
  QuadraticCost cost = vdp_cost();
  ModelList models;
  NetConfig net = NetConfig::mlp(2, 1);
  for (int i = 0; i < 3; ++i)
    models.push_back(std::make_shared<MlpModel>(net, init_params(net, 50 + std::uint64_t(i))));
  const VectorXd knot_times = uniform_knot_times(0.0, 1.0, 11);
  Rng rng(51);
  const VectorXd knots = rng.uniform_vector(11, -1.0, 1.0);
  ControlBounds bounds = ControlBounds::uniform(-2, 2, 1);
  const VectorXd x0 = (VectorXd(2) << 0.5, -0.5).finished();
  IntegratorConfig integ;

  const double combined = mean_cost_objective(models, cost, x0, knots, knot_times, bounds, integ);
  const ControlSignal sig = signal_from_knots(knots, knot_times, 1);
  double manual = 0.0;
  for (const auto& m : models)
    manual += trajectory_cost(*m, cost, x0, sig, 0.0, 1.0, integ, nullptr, &bounds) / 3.0;
  CHECK(combined == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("adjoint gradient matches finite differences on van der pol and cart pole") {
  IntegratorConfig tight;
  tight.rtol = 1e-10;
  tight.atol = 1e-12;
  for (const std::string name : {"vdp", "cartpole"}) {
    const ModelPtr sys = make_system(name);
    const int d = sys->state_dim();
    QuadraticCost cost = QuadraticCost::diagonal(VectorXd::Ones(d), VectorXd::Ones(d),
                                                 VectorXd::Constant(1, 0.5), VectorXd::Zero(d));
    ModelList models = {sys};
    const int k = 9;
    const VectorXd knot_times = uniform_knot_times(0.0, 0.8, k);
    ControlBounds bounds = ControlBounds::uniform(-3.0, 3.0, 1);
    const VectorXd x0 = VectorXd::Constant(d, 0.3);
    Rng rng(name == "vdp" ? 61 : 62);
    const int n_vectors = name == "vdp" ? 6 : 4;
    for (int trial = 0; trial < n_vectors; ++trial) {
      const VectorXd knots = rng.uniform_vector(k, -1.0, 1.0);
      VectorXd grad;
      adjoint_gradient(models, cost, x0, knots, knot_times, bounds, tight, grad, 8);
      for (int j = 0; j < k; j += 2) {
        const double fd = pmpc_test::fd_gradient_entry(
            [&](const VectorXd& kk) {
              return mean_cost_objective(models, cost, x0, kk, knot_times, bounds, tight);
            },
            knots, j, 1e-5);
        const double scale = std::max({1.0, std::abs(fd), std::abs(grad[j])});
        CHECK(std::abs(grad[j] - fd) / scale <= 1e-3);
      }
    }
  }
}

TEST_CASE("adjoint gradient vanishes at a converged interior PMP solution") {
  ModelList models = {make_system("vdp")};
  QuadraticCost cost = vdp_cost();
  ControlBounds bounds = ControlBounds::uniform(-10.0, 10.0, 1);  // interior everywhere
  ShootingProblem p(models, cost, bounds, (VectorXd(2) << 1.0, 1.0).finished());
  p.t0 = 0.0;
  p.tf = 1.5;
  p.segments = 3;
  p.control_dt = 0.02;
  p.integrator.rtol = 1e-10;
  p.integrator.atol = 1e-12;
  p.solver.residual_tol = 1e-8;
  SolveResult result = solve_mean_h(p);
  REQUIRE(result.report.converged);

  IntegratorConfig tight;
  tight.rtol = 1e-10;
  tight.atol = 1e-12;
  const VectorXd knot_times = result.control.knot_times();
  VectorXd knots(knot_times.size());
  for (int j = 0; j < knot_times.size(); ++j) knots[j] = result.control.knot_values()(0, j);
  VectorXd grad;
  adjoint_gradient(models, cost, p.x0, knots, knot_times, bounds, tight, grad, 8);
  MESSAGE("adjoint gradient at PMP solution: ", grad.lpNorm<Eigen::Infinity>());
  CHECK(grad.lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("zero-length horizon gives a vanishing adjoint gradient") {
  ModelList models = {make_system("vdp")};
  QuadraticCost cost = vdp_cost();
  ControlBounds bounds = ControlBounds::uniform(-2, 2, 1);
  const VectorXd knot_times = uniform_knot_times(0.0, 1e-7, 3);
  VectorXd grad;
  adjoint_gradient(models, cost, (VectorXd(2) << 1.0, 1.0).finished(), VectorXd::Zero(3),
                   knot_times, bounds, IntegratorConfig::oracle(), grad, 4);
  CHECK(grad.lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("batched rollout cost approximates the exact mean objective") {
  QuadraticCost cost = vdp_cost();
  NetConfig net = NetConfig::mlp(2, 1);
  ModelList models;
  for (int i = 0; i < 2; ++i)
    models.push_back(std::make_shared<MlpModel>(net, init_params(net, 80 + std::uint64_t(i))));
  const VectorXd knot_times = uniform_knot_times(0.0, 1.0, 21);
  ControlBounds bounds = ControlBounds::uniform(-2, 2, 1);
  const VectorXd x0 = (VectorXd(2) << 0.7, -0.1).finished();
  BatchRolloutCost fast(models, &cost, x0, knot_times, bounds, 2);

  Rng rng(81);
  MatrixXd candidates(21, 5);
  for (int p = 0; p < 5; ++p) candidates.col(p) = rng.uniform_vector(21, -1.5, 1.5);
  const VectorXd fast_costs = fast(candidates);
  for (int p = 0; p < 5; ++p) {
    const double exact = mean_cost_objective(models, cost, x0, candidates.col(p), knot_times,
                                             bounds, IntegratorConfig{});
    CHECK(fast_costs[p] == doctest::Approx(exact).epsilon(1e-3));
  }
}
