#include <doctest.h>

#include <cmath>

#include "pmpc/integrate.hpp"
#include "pmpc/systems.hpp"
#include "test_utils.hpp"

using namespace pmpc;

namespace {

const OdeRhs decay = [](double, const VectorXd& x, VectorXd& dx) { dx = -x; };

}  // namespace

TEST_CASE("adaptive integrator matches exponential decay") {
  IntegratorConfig cfg;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-8;
  VectorXd x0 = VectorXd::Ones(1);
  Trajectory traj = integrate_adaptive(decay, x0, 0.0, 1.0, cfg);
  CHECK(traj.back()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
  CHECK(std::abs(traj.back()[0] - 0.3678794) < 1e-6);
}

TEST_CASE("zero field gives a constant trajectory") {
  const OdeRhs zero = [](double, const VectorXd& x, VectorXd& dx) { dx.setZero(x.size()); };
  VectorXd x0(2);
  x0 << 2.0, 3.0;
  Trajectory traj = integrate_adaptive(zero, x0, 0.0, 3.7, IntegratorConfig{});
  for (int i = 0; i < traj.size(); ++i) {
    CHECK(traj.states(0, i) == doctest::Approx(2.0));
    CHECK(traj.states(1, i) == doctest::Approx(3.0));
  }
}

TEST_CASE("adaptive Van der Pol run matches a fine fixed-step RK4 oracle") {
  VanDerPol vdp;
  VectorXd u0 = VectorXd::Zero(1);
  const OdeRhs rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
    vdp.eval_f(x, u0, t, dx);
  };
  VectorXd x0(2);
  x0 << 1.0, 1.0;
  IntegratorConfig cfg;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;
  Trajectory adaptive = integrate_adaptive(rhs, x0, 0.0, 10.0, cfg);
  Trajectory oracle = integrate_rk4_fixed(rhs, x0, 0.0, 10.0, 1e-4);
  for (int i = 0; i < 2; ++i)
    CHECK(adaptive.back()[i] == doctest::Approx(oracle.back()[i]).epsilon(1e-4));
}

TEST_CASE("fixed RK4 on exponential decay") {
  VectorXd x0 = VectorXd::Ones(1);
  Trajectory traj = integrate_rk4_fixed(decay, x0, 0.0, 1.0, 0.01);
  CHECK(std::abs(traj.back()[0] - 0.36787944117144233) < 1e-8);
}

TEST_CASE("RK4 error shrinks by about 16x when halving the step") {
  VectorXd x0 = VectorXd::Ones(1);
  const double exact = std::exp(-1.0);
  const double err_h = std::abs(integrate_rk4_fixed(decay, x0, 0.0, 1.0, 0.02).back()[0] - exact);
  const double err_h2 = std::abs(integrate_rk4_fixed(decay, x0, 0.0, 1.0, 0.01).back()[0] - exact);
  const double ratio = err_h / err_h2;
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("zero linear field is the identity") {
  const OdeRhs zero_a = [](double, const VectorXd& x, VectorXd& dx) {
    dx = MatrixXd::Zero(x.size(), x.size()) * x;
  };
  VectorXd x0(3);
  x0 << 1.0, -2.0, 0.5;
  Trajectory traj = integrate_rk4_fixed(zero_a, x0, 0.0, 2.0, 0.1);
  CHECK((traj.back() - x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dense output agrees with separate runs at interior times") {
  IntegratorConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  VectorXd x0 = VectorXd::Ones(1);
  VectorXd dense = VectorXd::LinSpaced(11, 0.0, 1.0);
  Trajectory traj = integrate_adaptive(decay, x0, 0.0, 1.0, cfg, &dense);
  REQUIRE(traj.size() == 11);
  for (int i = 0; i < 11; ++i)
    CHECK(traj.states(0, i) == doctest::Approx(std::exp(-dense[i])).epsilon(1e-8));
}

TEST_CASE("backward integration works") {
  IntegratorConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  VectorXd xf(1);
  xf << std::exp(-1.0);
  Trajectory traj = integrate_adaptive(decay, xf, 1.0, 0.0, cfg);
  CHECK(traj.back()[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("step-count exhaustion raises a non-convergence error with state") {
  IntegratorConfig cfg;
  cfg.max_steps = 3;
  VectorXd x0 = VectorXd::Ones(1);
  try {
    integrate_adaptive(decay, x0, 0.0, 1e3, cfg);
    FAIL("expected NonConvergenceError");
  } catch (const NonConvergenceError& e) {
    CHECK(e.state.size() == 1);
    CHECK(e.time >= 0.0);
    CHECK(e.time < 1e3);
  }
}

TEST_CASE("finite-time blowup raises a divergence error") {
  const OdeRhs blowup = [](double, const VectorXd& x, VectorXd& dx) {
    dx = x.array().square().matrix();
  };
  VectorXd x0 = VectorXd::Ones(1);
  CHECK_THROWS_AS(integrate_adaptive(blowup, x0, 0.0, 5.0, IntegratorConfig{}), NumericalError);
}

TEST_CASE("trajectory CSV round trip") {
  VectorXd x0(2);
  x0 << 0.3, -1.2;
  Trajectory traj = integrate_rk4_fixed(
      [](double, const VectorXd& x, VectorXd& dx) { dx = -0.5 * x; }, x0, 0.0, 1.0, 0.1);
  const std::string path = "traj_roundtrip_test.csv";
  traj.to_csv(path);
  Trajectory loaded = Trajectory::from_csv(path);
  REQUIRE(loaded.size() == traj.size());
  CHECK((loaded.states - traj.states).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.times - traj.times).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("adaptive and fine RK4 agree on all benchmark systems") {
  for (const std::string name : {"vdp", "cartpole", "duffing", "sine_demo", "linear"}) {
    const ModelPtr sys = make_system(name);
    VectorXd u0 = VectorXd::Constant(sys->control_dim(), 0.3);
    const OdeRhs rhs = [&](double t, const VectorXd& x, VectorXd& dx) {
      sys->eval_f(x, u0, t, dx);
    };
    VectorXd x0 = VectorXd::Constant(sys->state_dim(), 0.5);
    IntegratorConfig cfg;  // planning defaults: rtol 1e-6, atol 1e-8
    Trajectory a = integrate_adaptive(rhs, x0, 0.0, 3.0, cfg);
    Trajectory b = integrate_rk4_fixed(rhs, x0, 0.0, 3.0, 1e-4);
    const double tol = 10.0 * (cfg.atol + cfg.rtol * b.back().norm());
    CHECK((a.back() - b.back()).norm() <= tol);
  }
}
