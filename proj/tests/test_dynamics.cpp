#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <random>

#include "tubempc/dynamics.hpp"
#include "tubempc/errors.hpp"

using namespace tubempc;
using Eigen::Vector2d;

namespace {

// The benchmark right-hand side written out literally, as an oracle.
Vector2d benchmark_literal(const Vector2d& x, const Vector2d& u) {
  const double s = (0.1 - 0.1 * std::exp(-x[1])) / (1.0 + std::exp(-x[1]));
  return {s + 0.25 * x[0] * x[0] + 2.0 * u[0], 0.25 * x[0] * x[0] + u[1] + 0.1 * std::pow(u[1], 3)};
}

VectorField decay() {
  return [](double, const Vector& x) { return Vector(-x); };
}

}  // namespace

TEST(BenchmarkModel, VanishesAtOrigin) {
  const AgentModel m = benchmark_model();
  EXPECT_EQ(m.eval(Vector2d(0, 0), Vector2d(0, 0)), Vector2d(0, 0));
}

TEST(BenchmarkModel, HandEvaluation) {
  const AgentModel m = benchmark_model();
  const Vector f = m.eval(Vector2d(1, 0), Vector2d(0, 0));
  EXPECT_DOUBLE_EQ(f[0], 0.25);
  EXPECT_DOUBLE_EQ(f[1], 0.25);
}

TEST(BenchmarkModel, MatchesLiteralFormula) {
  const AgentModel m = benchmark_model();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(-5, 5), u(-2.125, 2.125);
  for (int i = 0; i < 200; ++i) {
    const Vector2d xs(x(rng), x(rng)), us(u(rng), u(rng));
    const Vector2d ref = benchmark_literal(xs, us);
    EXPECT_NEAR((m.eval(xs, us) - ref).norm(), 0.0, 1e-13 * (1.0 + ref.norm()));
  }
}

TEST(BenchmarkModel, ControlJacobianAtZeroSecondInput) {
  const AgentModel m = benchmark_model();
  Eigen::Matrix2d ref;
  ref << 2, 0, 0, 1;
  EXPECT_EQ(m.control_jacobian(Vector2d(3, -1), Vector2d(0.7, 0)), Eigen::MatrixXd(ref));
}

TEST(BenchmarkModel, ControlJacobianMatchesFiniteDifferences) {
  const AgentModel m = benchmark_model();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> x(-5, 5), u(-2.125, 2.125);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    const Vector2d xs(x(rng), x(rng)), us(u(rng), u(rng));
    Eigen::Matrix2d fd;
    for (int j = 0; j < 2; ++j) {
      Vector2d up = us, dn = us;
      up[j] += h;
      dn[j] -= h;
      fd.col(j) = (benchmark_literal(xs, up) - benchmark_literal(xs, dn)) / (2 * h);
    }
    const Eigen::MatrixXd J = m.control_jacobian(xs, us);
    EXPECT_LE((J - fd).norm(), 1e-5 * J.norm()) << "at x=" << xs.transpose() << " u=" << us.transpose();
  }
}

TEST(BenchmarkModel, RepeatedCallsAreBitwiseIdentical) {
  const AgentModel m = benchmark_model();
  const Vector2d x(1.2345678901, -3.21), u(0.3, -1.9);
  const Vector a = m.eval(x, u);
  const Vector b = m.eval(x, u);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 2), 0);
}

TEST(BenchmarkModel, EquilibriumInputHoldsTargetAtRest) {
  const AgentModel m = benchmark_model();
  const Vector2d x(2.0, 0.0);
  const Vector u = equilibrium_input(m, x);
  EXPECT_LT(m.eval(x, u).norm(), 1e-12);
  EXPECT_DOUBLE_EQ(u[0], -0.5);
}

TEST(BenchmarkDisturbance, ValueAtZeroAndQuarterPeriod) {
  const DisturbanceSignal w = benchmark_disturbance();
  EXPECT_EQ(w.eval(0.0), Vector2d(0.3, 0.0));
  EXPECT_NEAR(w.eval(M_PI / 2).norm(), 0.0, 1e-15);
  EXPECT_EQ(w.bound(), 0.3);
}

// |w(t)|^2 = 0.09 c + 0.16 c (1 - c) with c = cos^2 t peaks at c = 25/32, so
// sup |w| = 0.3125: the nominal bound 0.3 is exceeded by about 4%.
TEST(BenchmarkDisturbance, DenseSamplingPeak) {
  const DisturbanceSignal w = benchmark_disturbance();
  double peak = 0.0;
  for (int i = 0; i <= 1000; ++i) peak = std::max(peak, w.eval(0.01 * i).norm());
  double fine = 0.0;
  for (int i = 0; i <= 2000000; ++i) fine = std::max(fine, w.eval(1e-6 * i * M_PI).norm());
  RecordProperty("observed_peak_grid_0.01", std::to_string(peak));
  RecordProperty("observed_peak_fine", std::to_string(fine));
  EXPECT_NEAR(fine, 0.3125, 1e-9);
  EXPECT_GT(peak, 0.3);
  EXPECT_LE(peak, 0.3125 + 1e-12);
}

TEST(RandomDisturbance, BoundedAndReproducible) {
  const DisturbanceSignal a = random_disturbance(2, 0.3, 0.1, 42, 1);
  const DisturbanceSignal b = random_disturbance(2, 0.3, 0.1, 42, 1);
  const DisturbanceSignal c = random_disturbance(2, 0.3, 0.1, 42, 2);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double t = 0.013 * i;
    EXPECT_LE(a.eval(t).norm(), 0.3 + 1e-15);
    EXPECT_EQ(a.eval(t), b.eval(t));
    differs = differs || a.eval(t) != c.eval(t);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.eval(0.01), a.eval(0.09));  // held within one slot
}

TEST(Rk4, ZeroFieldIsConstant) {
  const auto traj = integrate_rk4([](double, const Vector& x) { return Vector(Vector::Zero(x.size())); },
                                  Vector2d(1, 2), 0.0, 0.37, 25);
  ASSERT_EQ(traj.size(), 26u);
  for (const Vector& x : traj.states) EXPECT_EQ(x, Vector2d(1, 2));
  EXPECT_TRUE(traj.consistent());
}

TEST(Rk4, ExponentialDecayClosedForm) {
  Vector x0(1);
  x0 << 1.0;
  const auto traj = integrate_rk4(decay(), x0, 0.0, 0.01, 100);
  EXPECT_NEAR(traj.states.back()[0], std::exp(-1.0), 1e-8);
  EXPECT_NEAR(traj.times.back(), 1.0, 1e-14);
}

TEST(Rk4, ExactForConstantVelocity) {
  const auto traj = integrate_rk4([](double, const Vector&) { return Vector(Vector2d(0, 1)); },
                                  Vector2d(0, 0), 0.0, 0.1, 10);
  EXPECT_NEAR((traj.states.back() - Vector2d(0, 1)).norm(), 0.0, 1e-14);
}

TEST(Rk4, FourthOrderConvergence) {
  Vector x0(1);
  x0 << 1.0;
  const auto err = [&](double dt, std::size_t n) {
    return std::abs(integrate_rk4(decay(), x0, 0.0, dt, n).states.back()[0] - std::exp(-2.0));
  };
  const double ratio = err(0.1, 20) / err(0.05, 40);
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Rk4, DivergenceCarriesTime) {
  Vector x0(1);
  x0 << 1.0;
  const VectorField blowup = [](double, const Vector& x) { return Vector(x.array().square() * 1e300); };
  try {
    integrate_rk4(blowup, x0, 0.0, 0.1, 10);
    FAIL() << "expected IntegrationDiverged";
  } catch (const IntegrationDiverged& e) {
    EXPECT_NEAR(e.time(), 0.1, 1e-12);
  }
}

TEST(Trajectory, ClampedInterpolation) {
  Trajectory t;
  t.times = {0.0, 1.0};
  t.states = {Vector2d(0, 0), Vector2d(2, 4)};
  EXPECT_EQ(t.state_at(-1.0), Vector2d(0, 0));
  EXPECT_EQ(t.state_at(0.5), Vector2d(1, 2));
  EXPECT_EQ(t.state_at(5.0), Vector2d(2, 4));
  t.inputs = {Vector2d(0, 0), Vector2d(0, 0)};
  EXPECT_FALSE(t.consistent());
}

TEST(VerifyAssumptions, BenchmarkEigenvalueBound) {
  const AssumptionReport r = verify_assumptions(benchmark_model(), 20);
  EXPECT_GE(r.min_eig, 1.0);
  EXPECT_TRUE(r.eig_ok);
  EXPECT_TRUE(r.f00_ok);
  EXPECT_EQ(r.grid_points, 160000u);
}

// Oracle: sup over the workspace of the spectral norm of df/dx, which is
// [[x1/2, 0.05 sech^2(x2/2)], [x1/2, 0]]. At x1 = 5 it is about 3.536, so the
// certified constant 2.5 is not a Euclidean Lipschitz bound on [-5, 5]^2.
TEST(VerifyAssumptions, CertifiedLipschitzConstantIsTooSmall) {
  double oracle = 0.0;
  for (int i = 0; i <= 200; ++i) {
    for (int j = 0; j <= 200; ++j) {
      const double x1 = -5.0 + 0.05 * i, x2 = -5.0 + 0.05 * j;
      Eigen::Matrix2d J;
      const double c = 1.0 / std::cosh(0.5 * x2);
      J << 0.5 * x1, 0.05 * c * c, 0.5 * x1, 0.0;
      oracle = std::max(oracle, Eigen::JacobiSVD<Eigen::Matrix2d>(J).singularValues()[0]);
    }
  }
  // Closed form at (5, 0): J'J = [[12.5, 0.125], [0.125, 0.0025]].
  const double tr = 12.5025, det = 12.5 * 0.0025 - 0.125 * 0.125;
  EXPECT_NEAR(oracle, std::sqrt(0.5 * (tr + std::sqrt(tr * tr - 4 * det))), 1e-12);
  EXPECT_GT(oracle, 3.53);
  EXPECT_LT(oracle, 3.54);
  const AssumptionReport r = verify_assumptions(benchmark_model(), 4);
  RecordProperty("lipschitz_estimate", std::to_string(r.lipschitz_estimate));
  EXPECT_GT(r.lipschitz_estimate, 2.5);
  EXPECT_LE(r.lipschitz_estimate, oracle + 1e-9);
  EXPECT_FALSE(r.lipschitz_ok);
  EXPECT_THROW(r.throw_if_failed(), AssumptionViolation);
}

TEST(VerifyAssumptions, IntegratorHasUnitEigenvalue) {
  const AgentModel m = integrator_model(2, BoxSet::symmetric(2, 1), BoxSet::symmetric(2, 1));
  const AssumptionReport r = verify_assumptions(m, 3);
  EXPECT_DOUBLE_EQ(r.min_eig, 1.0);
  EXPECT_TRUE(r.ok());
}

TEST(VerifyAssumptions, RejectsCoarseGrid) {
  EXPECT_THROW(verify_assumptions(benchmark_model(), 1), DomainError);
}
