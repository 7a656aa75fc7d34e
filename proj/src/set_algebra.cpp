#include "tubempc/set_algebra.hpp"

#include <cmath>
#include <string>

#include "tubempc/errors.hpp"

namespace tubempc {

BoxSet::BoxSet(Eigen::VectorXd lower, Eigen::VectorXd upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) {
    throw DomainError("BoxSet: lower/upper dimension mismatch");
  }
  for (Eigen::Index j = 0; j < lower_.size(); ++j) {
    if (!(lower_[j] <= upper_[j])) {
      throw DomainError("BoxSet: lower > upper at coordinate " + std::to_string(j));
    }
  }
}

BoxSet BoxSet::symmetric(std::size_t dim, double half_width) {
  const auto n = static_cast<Eigen::Index>(dim);
  return BoxSet(Eigen::VectorXd::Constant(n, -half_width),
                Eigen::VectorXd::Constant(n, half_width));
}

bool BoxSet::contains(const Eigen::Ref<const Eigen::VectorXd>& x, double tol) const {
  if (x.size() != lower_.size()) throw DomainError("BoxSet::contains: dimension mismatch");
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!(x[j] >= lower_[j] - tol && x[j] <= upper_[j] + tol)) return false;
  }
  return true;
}

double BoxSet::distance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return (x - project(x)).norm();
}

Eigen::VectorXd BoxSet::project(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != lower_.size()) throw DomainError("BoxSet::project: dimension mismatch");
  return x.cwiseMax(lower_).cwiseMin(upper_);
}

double BoxSet::margin(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return std::min((x - lower_).minCoeff(), (upper_ - x).minCoeff());
}

bool BoxSet::operator==(const BoxSet& other) const {
  return lower_.size() == other.lower_.size() && lower_ == other.lower_ &&
         upper_ == other.upper_;
}

BallSet::BallSet(Eigen::VectorXd center, double radius)
    : center_(std::move(center)), radius_(radius) {
  if (!(radius_ >= 0.0)) throw DomainError("BallSet: negative radius");
}

BallSet BallSet::origin(std::size_t dim, double radius) {
  return BallSet(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), radius);
}

bool BallSet::contains(const Eigen::Ref<const Eigen::VectorXd>& x, double tol) const {
  if (x.size() != center_.size()) throw DomainError("BallSet::contains: dimension mismatch");
  return (x - center_).norm() <= radius_ + tol;
}

bool BallSet::operator==(const BallSet& other) const {
  return center_.size() == other.center_.size() && center_ == other.center_ &&
         radius_ == other.radius_;
}

BoxOrEmpty pontryagin_diff_box_ball(const BoxSet& box, double radius) {
  if (!(radius >= 0.0)) throw DomainError("pontryagin_diff_box_ball: negative radius");
  Eigen::VectorXd lo = box.lower().array() + radius;
  Eigen::VectorXd hi = box.upper().array() - radius;
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (lo[j] > hi[j]) return EmptySet{static_cast<std::size_t>(j), lo[j], hi[j]};
  }
  return BoxSet(std::move(lo), std::move(hi));
}

MinkowskiBoxBall::MinkowskiBoxBall(BoxSet box, double radius)
    : box_(std::move(box)), radius_(radius) {
  if (!(radius_ >= 0.0)) throw DomainError("minkowski_add_box_ball: negative radius");
}

bool MinkowskiBoxBall::contains(const Eigen::Ref<const Eigen::VectorXd>& x, double tol) const {
  return box_.distance(x) <= radius_ + tol;
}

MinkowskiBoxBall minkowski_add_box_ball(const BoxSet& box, double radius) {
  return MinkowskiBoxBall(box, radius);
}

BallSet scale_ball(double scalar, const BallSet& ball) {
  return BallSet(scalar * ball.center(), std::abs(scalar) * ball.radius());
}

BoxSet translate_box(const BoxSet& box, const Eigen::Ref<const Eigen::VectorXd>& offset) {
  if (offset.size() != static_cast<Eigen::Index>(box.dim())) {
    throw DomainError("translate_box: dimension mismatch");
  }
  return BoxSet(box.lower() + offset, box.upper() + offset);
}

bool box_membership(const BoxSet& box, const Eigen::Ref<const Eigen::VectorXd>& x, double tol) {
  return box.contains(x, tol);
}

bool ball_membership(const BallSet& ball, const Eigen::Ref<const Eigen::VectorXd>& x,
                     double tol) {
  return ball.contains(x, tol);
}

}  // namespace tubempc
