#include "tubempc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "tubempc/errors.hpp"

namespace tubempc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void central_difference_derivatives(const NonlinearProgram& program, const VectorXd& x,
                                    double step, NlpEvaluation& out) {
  const auto nv = static_cast<Eigen::Index>(program.num_variables());
  const auto nc = static_cast<Eigen::Index>(program.num_constraints());
  out.gradient.resize(nv);
  out.jacobian.resize(nc, nv);
  NlpEvaluation plus, minus;
  VectorXd xp = x;
  for (Eigen::Index j = 0; j < nv; ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    program.evaluate(xp, false, plus);
    xp[j] = x[j] - h;
    program.evaluate(xp, false, minus);
    xp[j] = x[j];
    out.gradient[j] = (plus.objective - minus.objective) / (2.0 * h);
    if (nc > 0) out.jacobian.col(j) = (plus.constraints - minus.constraints) / (2.0 * h);
  }
}

namespace {

class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NonlinearProgram& program, const AlOptions& options)
      : program_(program), options_(options) {}

  struct Point {
    VectorXd x;
    NlpEvaluation eval;
    double merit = 0.0;
    VectorXd grad;  // empty until derivatives are computed
  };

  void set_multipliers(const VectorXd& lambda, double mu) {
    lambda_ = lambda;
    mu_ = mu;
  }

  bool evaluate(Point& p, bool derivatives) const {
    const bool analytic = options_.gradient == GradientMode::analytic;
    program_.evaluate(p.x, derivatives && analytic, p.eval);
    p.grad.resize(0);
    if (!std::isfinite(p.eval.objective) || !p.eval.constraints.allFinite()) {
      p.merit = std::numeric_limits<double>::infinity();
      return false;
    }
    const VectorXd shifted = (lambda_ + mu_ * p.eval.constraints).cwiseMax(0.0);
    p.merit = p.eval.objective +
              (shifted.squaredNorm() - lambda_.squaredNorm()) / (2.0 * mu_);
    if (derivatives) {
      if (!analytic) central_difference_derivatives(program_, p.x, options_.fd_step, p.eval);
      p.grad = p.eval.gradient;
      if (shifted.size() > 0) p.grad.noalias() += p.eval.jacobian.transpose() * shifted;
    }
    return true;
  }

 private:
  const NonlinearProgram& program_;
  const AlOptions& options_;
  VectorXd lambda_;
  double mu_ = 1.0;
};

VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

double projected_gradient_norm(const VectorXd& x, const VectorXd& g, const VectorXd& lo,
                               const VectorXd& hi) {
  if (x.size() == 0) return 0.0;
  return (project(x - g, lo, hi) - x).lpNorm<Eigen::Infinity>();
}

// Projected BFGS on the merit function. Returns true on a small projected gradient.
bool minimize_bounded(const AugmentedLagrangian& merit, AugmentedLagrangian::Point& p,
                      const VectorXd& lo, const VectorXd& hi, const AlOptions& options,
                      int& iterations) {
  const Eigen::Index nv = p.x.size();
  MatrixXd H = MatrixXd::Identity(nv, nv);
  bool identity = true;
  bool scaled = false;
  for (int it = 0; it < options.max_inner; ++it) {
    if (projected_gradient_norm(p.x, p.grad, lo, hi) < options.kkt_tol) return true;

    VectorXd masked = p.grad;
    for (Eigen::Index i = 0; i < nv; ++i) {
      const bool at_lo = p.x[i] <= lo[i] && p.grad[i] > 0.0;
      const bool at_hi = p.x[i] >= hi[i] && p.grad[i] < 0.0;
      if (at_lo || at_hi) masked[i] = 0.0;
    }
    VectorXd d = -H * masked;
    for (Eigen::Index i = 0; i < nv; ++i) {
      if (masked[i] == 0.0 && p.grad[i] != 0.0) d[i] = 0.0;
    }
    if (p.grad.dot(d) >= 0.0) {
      H.setIdentity();
      identity = true;
      d = -masked;
    }

    AugmentedLagrangian::Point trial;
    bool accepted = false;
    double alpha = 1.0;
    for (int ls = 0; ls < 40; ++ls) {
      trial.x = project(p.x + alpha * d, lo, hi);
      if ((trial.x - p.x).lpNorm<Eigen::Infinity>() == 0.0) break;
      const bool ok = merit.evaluate(trial, ls == 0);
      if (ok && trial.merit <= p.merit + 1e-4 * p.grad.dot(trial.x - p.x)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    ++iterations;
    if (!accepted) {
      if (!identity) {
        H.setIdentity();
        identity = true;
        continue;
      }
      return false;
    }
    if (trial.grad.size() == 0) merit.evaluate(trial, true);

    const VectorXd s = trial.x - p.x;
    const VectorXd y = trial.grad - p.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const VectorXd Hy = H * y;
      // H+ = (I - rho s y') H (I - rho y s') + rho s s'
      H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
      identity = false;
    }
    p = std::move(trial);
  }
  return projected_gradient_norm(p.x, p.grad, lo, hi) < options.kkt_tol;
}

double max_violation(const VectorXd& g) {
  return g.size() == 0 ? 0.0 : std::max(0.0, g.maxCoeff());
}

}  // namespace

AlResult solve_augmented_lagrangian(const NonlinearProgram& program, const VectorXd& x0,
                                    const AlOptions& options) {
  const VectorXd& lo = program.lower();
  const VectorXd& hi = program.upper();
  const auto nc = static_cast<Eigen::Index>(program.num_constraints());

  AugmentedLagrangian merit(program, options);
  VectorXd lambda = VectorXd::Zero(nc);
  double mu = options.penalty_init;
  merit.set_multipliers(lambda, mu);

  AugmentedLagrangian::Point p;
  p.x = project(x0, lo, hi);
  if (!merit.evaluate(p, true)) {
    throw SolverDiverged("augmented Lagrangian: objective is not finite at the start point");
  }

  AlResult best;
  bool have_best = false;
  auto better = [&](double viol, double obj) {
    if (!have_best) return true;
    const bool feas = viol <= options.constraint_tol;
    const bool best_feas = best.max_violation <= options.constraint_tol;
    if (feas != best_feas) return feas;
    return feas ? obj < best.objective : viol < best.max_violation;
  };

  int inner_total = 0;
  double prev_viol = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < options.max_outer; ++outer) {
    minimize_bounded(merit, p, lo, hi, options, inner_total);

    const VectorXd& g = p.eval.constraints;
    const double viol = max_violation(g);
    const VectorXd lambda_next = (lambda + mu * g).cwiseMax(0.0);

    VectorXd grad_lagr = p.eval.gradient;
    if (nc > 0) grad_lagr.noalias() += p.eval.jacobian.transpose() * lambda_next;
    double kkt = projected_gradient_norm(p.x, grad_lagr, lo, hi);
    if (nc > 0) kkt = std::max(kkt, lambda_next.cwiseProduct(g).cwiseAbs().maxCoeff());
    kkt = std::max(kkt, viol);

    spdlog::trace("al outer {}: inner {} f {:.9g} viol {:.2e} kkt {:.2e} mu {:g}", outer, inner_total,
                  p.eval.objective, viol, kkt, mu);
    const bool done = viol <= options.constraint_tol && kkt <= options.kkt_tol;
    if (done || better(viol, p.eval.objective)) {
      best.x = p.x;
      best.objective = p.eval.objective;
      best.constraints = g;
      best.multipliers = lambda_next;
      best.max_violation = viol;
      best.kkt_residual = kkt;
      have_best = true;
    }
    best.outer_iterations = outer + 1;
    if (done) {
      best.converged = true;
      break;
    }

    lambda = lambda_next;
    if (viol > options.constraint_tol && viol > 0.25 * prev_viol) mu *= options.penalty_growth;
    prev_viol = viol;
    merit.set_multipliers(lambda, mu);
    merit.evaluate(p, true);
  }
  best.inner_iterations = inner_total;
  return best;
}

}  // namespace tubempc
