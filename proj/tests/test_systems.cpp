#include <doctest.h>

#include <cmath>

#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"
#include "test_utils.hpp"

using namespace pmpc;
using pmpc_test::check_model_jacobians;

TEST_CASE("van der pol vector field values") {
  VanDerPol vdp;  // mu = 1.5
  VectorXd u = VectorXd::Zero(1);
  CHECK(vdp.f((VectorXd(2) << 0, 0).finished(), u).cwiseAbs().maxCoeff() == 0.0);

  // direct substitution: 1.5 * (1 - 1/3 + 1) = 2.5
  const VectorXd fx = vdp.f((VectorXd(2) << 1, 1).finished(), u);
  CHECK(fx[0] == doctest::Approx(2.5));
  CHECK(fx[1] == doctest::Approx(-1.0));

  const MatrixXd ju = vdp.jac_u((VectorXd(2) << 0.3, -0.7).finished(), u);
  CHECK(ju(0, 0) == doctest::Approx(0.0));
  CHECK(ju(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("cart pole equilibria") {
  CartPole cp;
  VectorXd u = VectorXd::Zero(1);
  CHECK(cp.f(VectorXd::Zero(4), u).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
  VectorXd upright(4);
  upright << 0.0, M_PI, 0.0, 0.0;
  CHECK(cp.f(upright, u).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("duffing vector field values and fixed points") {
  Duffing duffing;  // alpha=-1, beta=2, delta=0.2, gamma=1
  VectorXd u = VectorXd::Zero(1);
  CHECK(duffing.f((VectorXd(2) << 0, 0).finished(), u).cwiseAbs().maxCoeff() == 0.0);

  const VectorXd fx = duffing.f((VectorXd(2) << 1, 0).finished(), u);
  CHECK(fx[0] == doctest::Approx(0.0));
  CHECK(fx[1] == doctest::Approx(-1.0));

  const double stable = 1.0 / std::sqrt(2.0);
  for (double s : {stable, -stable}) {
    const VectorXd f0 = duffing.f((VectorXd(2) << s, 0).finished(), u);
    CHECK(f0.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("sine demo values and jacobians") {
  SineDemo demo(1.0);
  VectorXd u = VectorXd::Zero(1);
  CHECK(demo.f(VectorXd::Zero(1), u)[0] == doctest::Approx(0.0));
  CHECK(demo.f((VectorXd(1) << M_PI / 2).finished(), u)[0] == doctest::Approx(1.0));

  SineDemo demo2(2.0);
  CHECK(demo2.jac_x(VectorXd::Zero(1), u)(0, 0) == doctest::Approx(2.0));
  CHECK(demo2.jac_u(VectorXd::Zero(1), u)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("analytic jacobians match central differences on 100 random points") {
  CHECK(check_model_jacobians(VanDerPol{}, 100, 11) < 1e-5);
  CHECK(check_model_jacobians(CartPole{}, 100, 12) < 1e-5);
  CHECK(check_model_jacobians(Duffing{}, 100, 13) < 1e-5);
  CHECK(check_model_jacobians(SineDemo{1.3}, 100, 14) < 1e-5);
  CHECK(check_model_jacobians(LinearSystem::double_integrator(), 100, 15) < 1e-5);
}

TEST_CASE("uncontrolled van der pol settles onto the limit cycle") {
  VanDerPol vdp;
  VectorXd u = VectorXd::Zero(1);
  const OdeRhs rhs = [&](double t, const VectorXd& x, VectorXd& dx) { vdp.eval_f(x, u, t, dx); };
  VectorXd x0(2);
  x0 << 2.0, 0.0;
  VectorXd dense = VectorXd::LinSpaced(201, 20.0, 40.0);
  IntegratorConfig cfg;
  Trajectory tail = integrate_adaptive(rhs, x0, 0.0, 40.0, cfg, &dense);
  for (int i = 0; i < tail.size(); ++i) {
    if (tail.times[i] < 20.0) continue;
    const double norm = tail.states.col(i).lpNorm<Eigen::Infinity>();
    CHECK(norm >= 0.1);
    CHECK(norm <= 5.0);
  }
}

TEST_CASE("uncontrolled duffing converges to a stable attractor") {
  Duffing duffing;
  VectorXd u = VectorXd::Zero(1);
  const OdeRhs rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
    duffing.eval_f(x, u, t, dx);
  };
  VectorXd x0(2);
  x0 << 1.5, 1.0;
  // linearized decay envelope: exp(-delta t / 2), below 1e-3 of the initial
  // deviation only after t ~ 72
  IntegratorConfig cfg;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;
  cfg.max_steps = 1000000;
  Trajectory traj = integrate_adaptive(rhs, x0, 0.0, 75.0, cfg);
  const VectorXd xf = traj.back();
  const double stable = 1.0 / std::sqrt(2.0);
  const double to_plus = (xf - (VectorXd(2) << stable, 0.0).finished()).norm();
  const double to_minus = (xf - (VectorXd(2) << -stable, 0.0).finished()).norm();
  CHECK(std::min(to_plus, to_minus) <= 1e-3);
}

TEST_CASE("system registry resolves names") {
  CHECK(make_system("vdp")->state_dim() == 2);
  CHECK(make_system("cartpole")->state_dim() == 4);
  CHECK(make_system("duffing")->state_dim() == 2);
  CHECK(make_system("sine_demo")->state_dim() == 1);
  CHECK(make_system("linear")->state_dim() == 2);
  CHECK_THROWS_AS(make_system("nope"), UsageError);
}
