#pragma once

/**
 * @file
 * @brief Bound-constrained augmented Lagrangian solver.
 *
 * Solves
 *
 *     min f(x)  s.t.  g(x) <= 0,  lower <= x <= upper
 *
 * with a Powell–Hestenes–Rockafellar augmented Lagrangian for g and a
 * projected quasi-Newton (BFGS on the free variables) inner loop that keeps
 * every iterate inside the bounds.
 */

#include <Eigen/Core>

#include <cstddef>

namespace tubempc {

struct NlpEvaluation {
  double objective = 0.0;
  Eigen::VectorXd constraints;  ///< g(x), feasible when <= 0
  Eigen::VectorXd gradient;     ///< df/dx, filled when derivatives are requested
  Eigen::MatrixXd jacobian;     ///< dg/dx (rows = constraints), filled when requested
};

class NonlinearProgram {
 public:
  virtual ~NonlinearProgram() = default;
  virtual std::size_t num_variables() const = 0;
  virtual std::size_t num_constraints() const = 0;
  virtual const Eigen::VectorXd& lower() const = 0;
  virtual const Eigen::VectorXd& upper() const = 0;
  /// Fills objective and constraints; gradient and jacobian only if `derivatives`.
  /// Programs that cannot supply derivatives leave them empty and are solved
  /// with GradientMode::central_difference.
  virtual void evaluate(const Eigen::VectorXd& x, bool derivatives, NlpEvaluation& out) const = 0;
};

enum class GradientMode { analytic, central_difference };

struct AlOptions {
  double kkt_tol = 1e-6;
  double constraint_tol = 1e-7;  ///< violation regarded as satisfied
  int max_inner = 200;
  int max_outer = 8;
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  double fd_step = 1e-6;
  GradientMode gradient = GradientMode::analytic;
};

struct AlResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd constraints;
  Eigen::VectorXd multipliers;
  double max_violation = 0.0;
  double kkt_residual = 0.0;
  int inner_iterations = 0;
  int outer_iterations = 0;
  bool converged = false;
};

/// Throws SolverDiverged if the objective is not finite at the projected start.
AlResult solve_augmented_lagrangian(const NonlinearProgram& program, const Eigen::VectorXd& x0,
                                    const AlOptions& options = {});

/// Derivatives of `program` at x by central differences.
void central_difference_derivatives(const NonlinearProgram& program, const Eigen::VectorXd& x,
                                    double step, NlpEvaluation& out);

}  // namespace tubempc
