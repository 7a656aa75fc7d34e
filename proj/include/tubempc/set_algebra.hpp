#pragma once

/**
 * @file
 * @brief Closed-form set operations on axis-aligned boxes and Euclidean balls.
 *
 * Every constraint set the controller tightens is a box and every tube
 * cross-section is a ball centered at the origin, so Pontryagin difference
 * and scalar scaling have exact closed forms. The Minkowski sum of a box and
 * a ball is not a box and is only exposed as a membership predicate.
 *
 * All sets are closed: boundary points are members.
 */

#include <Eigen/Core>

#include <cstddef>
#include <variant>

namespace tubempc {

inline constexpr double kMembershipTol = 1e-9;

/// Axis-aligned box {x : lower <= x <= upper}.
class BoxSet {
 public:
  BoxSet() = default;
  /// Throws DomainError if dimensions differ or some lower[j] > upper[j].
  BoxSet(Eigen::VectorXd lower, Eigen::VectorXd upper);

  /// Box [-half_width, half_width]^dim.
  static BoxSet symmetric(std::size_t dim, double half_width);

  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  std::size_t dim() const { return static_cast<std::size_t>(lower_.size()); }

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x,
                double tol = kMembershipTol) const;

  /// Euclidean distance from x to the box (0 inside).
  double distance(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Per-coordinate projection onto the box.
  Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Smallest signed slack over all faces; negative when x is outside.
  double margin(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  bool operator==(const BoxSet& other) const;

 private:
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
};

/// Closed Euclidean ball B(center, radius).
class BallSet {
 public:
  BallSet() = default;
  /// Throws DomainError on negative radius.
  BallSet(Eigen::VectorXd center, double radius);

  static BallSet origin(std::size_t dim, double radius);

  const Eigen::VectorXd& center() const { return center_; }
  double radius() const { return radius_; }
  std::size_t dim() const { return static_cast<std::size_t>(center_.size()); }

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x,
                double tol = kMembershipTol) const;

  bool operator==(const BallSet& other) const;

 private:
  Eigen::VectorXd center_;
  double radius_ = 0.0;
};

/// Outcome of a Pontryagin difference that inverted an interval.
struct EmptySet {
  std::size_t coordinate = 0;  ///< first coordinate whose interval inverted
  double lower = 0.0;          ///< shrunken lower bound
  double upper = 0.0;          ///< shrunken upper bound
};

using BoxOrEmpty = std::variant<BoxSet, EmptySet>;

/// box ⊖ B(0, radius) = {lower + r, upper - r}, or EmptySet if it inverts.
BoxOrEmpty pontryagin_diff_box_ball(const BoxSet& box, double radius);

/// Membership predicate for box ⊕ B(0, radius).
class MinkowskiBoxBall {
 public:
  MinkowskiBoxBall(BoxSet box, double radius);
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x,
                double tol = kMembershipTol) const;
  const BoxSet& box() const { return box_; }
  double radius() const { return radius_; }

 private:
  BoxSet box_;
  double radius_;
};

MinkowskiBoxBall minkowski_add_box_ball(const BoxSet& box, double radius);

/// scalar ∘ B(c, r) = B(scalar c, |scalar| r).
BallSet scale_ball(double scalar, const BallSet& ball);

/// box ⊕ {offset}.
BoxSet translate_box(const BoxSet& box, const Eigen::Ref<const Eigen::VectorXd>& offset);

bool box_membership(const BoxSet& box, const Eigen::Ref<const Eigen::VectorXd>& x,
                    double tol = kMembershipTol);
bool ball_membership(const BallSet& ball, const Eigen::Ref<const Eigen::VectorXd>& x,
                     double tol = kMembershipTol);

}  // namespace tubempc
