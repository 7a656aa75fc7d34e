#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "tubempc/errors.hpp"
#include "tubempc/set_algebra.hpp"

using namespace tubempc;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

BoxSet box2(double l0, double l1, double u0, double u1) {
  return BoxSet(Vector2d(l0, l1), Vector2d(u0, u1));
}

void expect_box_near(const BoxSet& b, const BoxSet& ref, double tol = 1e-12) {
  ASSERT_EQ(b.dim(), ref.dim());
  for (Eigen::Index j = 0; j < b.lower().size(); ++j) {
    EXPECT_NEAR(b.lower()[j], ref.lower()[j], tol) << "lower " << j;
    EXPECT_NEAR(b.upper()[j], ref.upper()[j], tol) << "upper " << j;
  }
}

// Uniform sample in the unit ball of R^n.
VectorXd sample_ball(std::mt19937_64& rng, Eigen::Index n, double radius) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  const double norm = v.norm();
  if (norm == 0.0) return VectorXd::Zero(n);
  return v / norm * radius * std::pow(u(rng), 1.0 / static_cast<double>(n));
}

}  // namespace

TEST(BoxSet, RejectsInvertedBounds) {
  EXPECT_THROW(box2(1, 0, 0, 1), DomainError);
  EXPECT_THROW(BoxSet(Vector2d(0, 0), VectorXd::Zero(3)), DomainError);
}

TEST(BallSet, RejectsNegativeRadius) { EXPECT_THROW(BallSet(Vector2d(0, 0), -0.1), DomainError); }

TEST(PontryaginDiff, ShrinksStatedErrorBoxOfAgentThree) {
  const auto r = pontryagin_diff_box_ball(box2(-5.9, -2.2, 4.1, 2.2), 0.3);
  ASSERT_TRUE(std::holds_alternative<BoxSet>(r));
  expect_box_near(std::get<BoxSet>(r), box2(-5.6, -1.9, 3.8, 1.9));
}

TEST(PontryaginDiff, InputBoxMinusScaledTubeIsUnitBox) {
  const auto r = pontryagin_diff_box_ball(BoxSet::symmetric(2, 2.125), 1.125);
  ASSERT_TRUE(std::holds_alternative<BoxSet>(r));
  // 2.125 - 1.125 is exact in binary.
  EXPECT_EQ(std::get<BoxSet>(r), BoxSet::symmetric(2, 1.0));
}

TEST(PontryaginDiff, ZeroRadiusIsIdentity) {
  const BoxSet b = box2(-1.5, 0.25, 3.0, 7.0);
  const auto r = pontryagin_diff_box_ball(b, 0.0);
  ASSERT_TRUE(std::holds_alternative<BoxSet>(r));
  EXPECT_EQ(std::get<BoxSet>(r), b);
}

TEST(PontryaginDiff, InvertedIntervalReportsCoordinate) {
  const auto r = pontryagin_diff_box_ball(box2(-5, -0.2, 5, 0.2), 0.3);
  ASSERT_TRUE(std::holds_alternative<EmptySet>(r));
  const EmptySet e = std::get<EmptySet>(r);
  EXPECT_EQ(e.coordinate, 1u);
  EXPECT_GT(e.lower, e.upper);
}

TEST(PontryaginDiff, DegenerateIntervalIsKept) {
  const auto r = pontryagin_diff_box_ball(box2(-1, -1, 1, 1), 1.0);
  ASSERT_TRUE(std::holds_alternative<BoxSet>(r));
  EXPECT_EQ(std::get<BoxSet>(r), box2(0, 0, 0, 0));
}

TEST(PontryaginDiff, NegativeRadiusThrows) {
  EXPECT_THROW(pontryagin_diff_box_ball(BoxSet::symmetric(2, 1), -1e-3), DomainError);
}

TEST(MinkowskiAdd, ZeroRadiusCorner) {
  const auto m = minkowski_add_box_ball(box2(0, 0, 1, 1), 0.0);
  EXPECT_TRUE(m.contains(Vector2d(1, 1)));
  EXPECT_FALSE(m.contains(Vector2d(1.001, 1)));
}

TEST(MinkowskiAdd, RoundedCornerMembership) {
  const auto m = minkowski_add_box_ball(box2(0, 0, 1, 1), 0.5);
  EXPECT_TRUE(m.contains(Vector2d(1.3, 0.5)));
  // dist((1.4, 1.4), box) = sqrt(0.32) > 0.5, although both coordinates are
  // within 0.5 of the box faces.
  EXPECT_NEAR(box2(0, 0, 1, 1).distance(Vector2d(1.4, 1.4)), std::sqrt(0.32), 1e-15);
  EXPECT_FALSE(m.contains(Vector2d(1.4, 1.4)));
}

TEST(MinkowskiAdd, TightenedBoxDilatesBetweenTightenedAndOriginal) {
  const BoxSet E = box2(-5.9, -2.2, 4.1, 2.2);
  const BoxSet Ebar = std::get<BoxSet>(pontryagin_diff_box_ball(E, 0.3));
  const auto dilated = minkowski_add_box_ball(Ebar, 0.3);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-7.0, 5.0), uy(-3.0, 3.0);
  int inside = 0;
  for (int s = 0; s < 10000; ++s) {
    const Vector2d p(ux(rng), uy(rng));
    if (Ebar.contains(p)) {
      EXPECT_TRUE(dilated.contains(p));
      ++inside;
    }
    if (dilated.contains(p)) {
      EXPECT_TRUE(E.contains(p));
    }
  }
  EXPECT_GT(inside, 1000);
}

TEST(ScaleBall, GainTimesTube) {
  const BallSet b = scale_ball(-3.75, BallSet::origin(2, 0.3));
  EXPECT_NEAR(b.radius(), 1.125, 1e-15);
  EXPECT_EQ(b.center(), Vector2d(0, 0));
}

TEST(ScaleBall, IdentityAndAnnihilation) {
  const BallSet b(Vector2d(1, -2), 0.7);
  EXPECT_EQ(scale_ball(1.0, b), b);
  const BallSet z = scale_ball(0.0, b);
  EXPECT_EQ(z.radius(), 0.0);
  EXPECT_EQ(z.center(), Vector2d(0, 0));
  const BallSet n = scale_ball(-2.0, b);
  EXPECT_EQ(n.center(), Vector2d(-2, 4));
  EXPECT_DOUBLE_EQ(n.radius(), 1.4);
}

TEST(TranslateBox, WorkspaceIntoErrorCoordinates) {
  const BoxSet D = BoxSet::symmetric(2, 5.0);
  EXPECT_EQ(translate_box(D, Vector2d(-2, 0)), box2(-7, -5, 3, 5));
  expect_box_near(translate_box(D, Vector2d(-0.1206, -1.1155)),
                  box2(-5.1206, -6.1155, 4.8794, 3.8845));
  EXPECT_EQ(translate_box(D, Vector2d(0, 0)), D);
  EXPECT_THROW(translate_box(D, VectorXd::Zero(3)), DomainError);
}

TEST(Membership, ClosedBoundariesWithTolerance) {
  const BoxSet b = BoxSet::symmetric(2, 1.0);
  EXPECT_TRUE(box_membership(b, Vector2d(1, 1)));
  EXPECT_FALSE(box_membership(b, Vector2d(1 + 1e-6, 0)));
  EXPECT_TRUE(box_membership(b, Vector2d(1 + 1e-10, 0)));
  const BallSet ball = BallSet::origin(2, 0.3);
  EXPECT_TRUE(ball_membership(ball, Vector2d(0.3, 0)));
  EXPECT_FALSE(ball_membership(ball, Vector2d(0.3 + 1e-6, 0)));
}

TEST(BoxSet, MarginAndProjection) {
  const BoxSet b = box2(-1, -2, 1, 2);
  EXPECT_DOUBLE_EQ(b.margin(Vector2d(0.5, 0)), 0.5);
  EXPECT_DOUBLE_EQ(b.margin(Vector2d(1.5, 0)), -0.5);
  EXPECT_EQ(b.project(Vector2d(3, -3)), Vector2d(1, -2));
  EXPECT_EQ(b.distance(Vector2d(0, 0)), 0.0);
}

// (S1 ⊖ B) ⊕ B ⊆ S1 for random boxes, radii, points and ball offsets.
TEST(SetAlgebraProperty, ErodedBoxPlusBallStaysInBox) {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> dim(1, 4);
  std::uniform_real_distribution<double> centre(-10.0, 10.0), half(0.01, 5.0), unit(0.0, 1.0);
  long violations = 0, checked = 0;
  int pairs = 0;
  while (pairs < 10000) {
    const int n = dim(rng);
    VectorXd lo(n), hi(n);
    double min_half = 1e300;
    for (int j = 0; j < n; ++j) {
      const double c = centre(rng), h = half(rng);
      lo[j] = c - h;
      hi[j] = c + h;
      min_half = std::min(min_half, h);
    }
    const BoxSet box(lo, hi);
    const double r = unit(rng) * min_half;
    const auto diff = pontryagin_diff_box_ball(box, r);
    if (!std::holds_alternative<BoxSet>(diff)) continue;
    const BoxSet& inner = std::get<BoxSet>(diff);
    ++pairs;
    for (int s = 0; s < 1000; ++s) {
      VectorXd p(n);
      for (int j = 0; j < n; ++j) p[j] = inner.lower()[j] + unit(rng) * (inner.upper()[j] - inner.lower()[j]);
      const VectorXd b = sample_ball(rng, n, r);
      ++checked;
      if (!box.contains(p + b, 0.0)) ++violations;
    }
  }
  EXPECT_EQ(checked, 10000L * 1000L);
  EXPECT_EQ(violations, 0);
}

// x'My <= x'Mx / (4 rho) + rho y'My for symmetric positive definite M.
TEST(SetAlgebraProperty, WeightedYoungInequality) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> logr(-3.0, 3.0);
  std::uniform_int_distribution<int> dim(1, 5);
  int violations = 0;
  double worst = -1e300;
  for (int s = 0; s < 10000; ++s) {
    const int n = dim(rng);
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) A(i, j) = g(rng);
    }
    const Eigen::MatrixXd M = A * A.transpose() + 1e-3 * Eigen::MatrixXd::Identity(n, n);
    VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = g(rng);
      y[i] = g(rng);
    }
    const double rho = std::pow(10.0, logr(rng));
    const double lhs = x.dot(M * y);
    const double rhs = x.dot(M * x) / (4.0 * rho) + rho * y.dot(M * y);
    const double scale = std::abs(x.dot(M * x) / (4.0 * rho)) + std::abs(rho * y.dot(M * y));
    worst = std::max(worst, (lhs - rhs) / scale);
    if (lhs - rhs > 1e-12 * scale) ++violations;
  }
  EXPECT_EQ(violations, 0) << "worst relative excess " << worst;
}
