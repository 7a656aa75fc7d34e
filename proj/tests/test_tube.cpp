#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tubempc/errors.hpp"
#include "tubempc/set_algebra.hpp"
#include "tubempc/tube.hpp"

using namespace tubempc;
using Eigen::Vector2d;

TEST(ComputeGain, BenchmarkConstants) { EXPECT_EQ(compute_gain(1, 1, 2.5, 1), 3.75); }

TEST(ComputeGain, HandArithmetic) {
  EXPECT_DOUBLE_EQ(compute_gain(0.5, 2, 1, 2), 2.75);
  // Large rho drives the gain to k_lower when L = 0.
  EXPECT_NEAR(compute_gain(1e12, 1, 1e-300, 1), 1.0, 1e-12);
}

TEST(ComputeGain, MatchesIndependentFormulaOnGrid) {
  for (double rho : {0.1, 0.7, 1.0, 3.0}) {
    for (double kl : {0.2, 1.0, 5.0}) {
      for (double L : {0.5, 2.5, 10.0}) {
        for (double J : {0.3, 1.0, 4.0}) {
          EXPECT_DOUBLE_EQ(compute_gain(rho, kl, L, J), kl + (L + 0.25 / rho) / J);
        }
      }
    }
  }
}

TEST(ComputeGain, RejectsNonPositive) {
  EXPECT_THROW(compute_gain(0, 1, 1, 1), DomainError);
  EXPECT_THROW(compute_gain(1, -1, 1, 1), DomainError);
  EXPECT_THROW(compute_gain(1, 1, 0, 1), DomainError);
  EXPECT_THROW(compute_gain(1, 1, 1, 0), DomainError);
}

TEST(TubeRadius, BenchmarkAndHandValues) {
  EXPECT_EQ(compute_tube_radius(1, 0.3, 1, 1), 0.3);
  EXPECT_EQ(compute_tube_radius(2.5, 0.0, 1, 1), 0.0);
  EXPECT_DOUBLE_EQ(compute_tube_radius(4, 0.3, 1, 1), 0.6);
  EXPECT_THROW(compute_tube_radius(0, 0.3, 1, 1), DomainError);
  EXPECT_THROW(compute_tube_radius(1, -0.3, 1, 1), DomainError);
}

TEST(TubeRadius, Monotonicity) {
  const double base = compute_tube_radius(1, 0.3, 1, 1);
  for (double f : {1.1, 2.0, 10.0}) {
    EXPECT_GT(compute_tube_radius(f, 0.3, 1, 1), base);
    EXPECT_GT(compute_tube_radius(1, 0.3 * f, 1, 1), base);
    EXPECT_LT(compute_tube_radius(1, 0.3, f, 1), base);
    EXPECT_LT(compute_tube_radius(1, 0.3, 1, f), base);
  }
}

TEST(AncillaryFeedback, ValuesAndLinearity) {
  EXPECT_EQ(ancillary_feedback(Vector2d(1, 2), Vector2d(1, 2), 3.75), Vector2d(0, 0));
  EXPECT_EQ(ancillary_feedback(Vector2d(0.1, 0), Vector2d(0, 0), 3.75), Vector2d(-0.375, 0));
  const Vector2d e(0.3, -0.7), eb(0.1, 0.2), e2(-1.1, 0.4), eb2(0.5, 0.5);
  const Vector lhs = ancillary_feedback(e, eb, 3.75) + ancillary_feedback(e2, eb2, 3.75);
  const Vector rhs = ancillary_feedback(e + e2, eb + eb2, 3.75);
  EXPECT_NEAR((lhs - rhs).norm(), 0.0, 1e-15);
  EXPECT_NEAR(ancillary_feedback(e, eb, 3.75).norm(), 3.75 * (e - eb).norm(), 1e-15);
}

TEST(TotalControl, Sum) {
  EXPECT_EQ(total_control(Vector2d(0.5, -0.5), Vector2d(-0.375, 0)), Vector2d(0.125, -0.5));
  EXPECT_EQ(total_control(Vector2d(0.5, -0.5), Vector2d(0, 0)), Vector2d(0.5, -0.5));
}

// u_bar in [-1, 1]^2 and |e - e_bar| <= 0.3 keep the applied input in [-2.125, 2.125]^2.
TEST(TotalControl, TightenedInputPlusFeedbackStaysAdmissible) {
  const BoxSet U = BoxSet::symmetric(2, 2.125);
  const BoxSet Ubar = BoxSet::symmetric(2, 1.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const Vector2d ub(unit(rng), unit(rng));
    Vector2d z(unit(rng), unit(rng));
    if (z.norm() > 1.0) z /= z.norm();
    z *= 0.3;
    ASSERT_TRUE(Ubar.contains(ub));
    const Vector u = total_control(ub, ancillary_feedback(z, Vector2d(0, 0), 3.75));
    EXPECT_TRUE(U.contains(u)) << u.transpose();
  }
}

TEST(ValidateRci, BenchmarkTubeIsInvariant) {
  const AgentModel m = benchmark_model();
  const TubeParams tube = synthesize_tube(1, 1, 2.5, 1, 0.3);
  EXPECT_EQ(tube.k_gain, 3.75);
  EXPECT_EQ(tube.z_tilde, 0.3);
  RciOptions opt;
  opt.n_trials = 100;
  opt.horizon = 10.0;
  const RciReport r = validate_rci(m, tube, benchmark_disturbance(), opt);
  RecordProperty("max_z_norm", std::to_string(r.max_z_norm));
  EXPECT_LE(r.max_z_norm, 0.306);
  EXPECT_EQ(r.lyapunov_violations, 0u);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.trials_run, 200u);  // adversarial and signal run per trial
}

TEST(ValidateRci, NoDisturbanceNoDeviation) {
  const AgentModel m = benchmark_model().with_constants(2.5, 1.0, BoxSet::symmetric(2, 2.125),
                                                        BoxSet::symmetric(2, 5.0));
  TubeParams tube = synthesize_tube(1, 1, 2.5, 1, 0.0);
  EXPECT_EQ(tube.z_tilde, 0.0);
  RciOptions opt;
  opt.n_trials = 20;
  opt.horizon = 2.0;
  // With w_tilde = 0 the worst-case disturbance vanishes as well.
  const RciReport r = validate_rci(m, tube, zero_disturbance(2), opt);
  EXPECT_LE(r.max_z_norm, 1e-9);
}

// The synthesized gain is conservative: halving it still keeps the deviation
// inside the tube under the worst-case disturbance, while a quarter of it
// does not.
TEST(ValidateRci, ReducedGainEventuallyLosesContainment) {
  const AgentModel m = benchmark_model();
  RciOptions opt;
  opt.n_trials = 100;
  TubeParams half = synthesize_tube(1, 1, 2.5, 1, 0.3);
  half.k_gain *= 0.5;
  const RciReport rh = validate_rci(m, half, benchmark_disturbance(), opt);
  RecordProperty("half_gain_max_z_norm", std::to_string(rh.max_z_norm));
  EXPECT_TRUE(rh.passed());

  TubeParams quarter = synthesize_tube(1, 1, 2.5, 1, 0.3);
  quarter.k_gain *= 0.25;
  const RciReport rq = validate_rci(m, quarter, benchmark_disturbance(), opt);
  RecordProperty("quarter_gain_max_z_norm", std::to_string(rq.max_z_norm));
  EXPECT_FALSE(rq.passed());
  EXPECT_GT(rq.max_z_norm, 0.306);
  EXPECT_GT(rq.lyapunov_violations, 0u);
}
