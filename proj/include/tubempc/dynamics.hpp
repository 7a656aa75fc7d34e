#pragma once

/**
 * @file
 * @brief Agent dynamics, disturbance signals and fixed-step integration.
 *
 * An agent obeys x' = f(x, u) + w(t) with as many inputs as states. The
 * model author certifies a Lipschitz constant of f in x and a lower bound
 * on the smallest eigenvalue of the symmetric part of the control Jacobian
 * df/du; verify_assumptions() cross-checks both by sampling.
 */

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tubempc/set_algebra.hpp"

namespace tubempc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using DynamicsFn = std::function<Vector(const Vector& x, const Vector& u)>;
using JacobianFn = std::function<Matrix(const Vector& x, const Vector& u)>;

/// Immutable description of one agent's nominal dynamics and certified constants.
class AgentModel {
 public:
  AgentModel(std::string name, std::size_t state_dim, DynamicsFn eval,
             JacobianFn control_jacobian, double lipschitz, double jac_lower_bound,
             BoxSet input_set, BoxSet workspace);

  const std::string& name() const { return name_; }
  std::size_t state_dim() const { return state_dim_; }

  Vector eval(const Vector& x, const Vector& u) const { return eval_(x, u); }
  /// df/du evaluated at (x, u).
  Matrix control_jacobian(const Vector& x, const Vector& u) const { return jac_(x, u); }
  /// df/dx by central differences (the model carries no analytic state Jacobian).
  Matrix state_jacobian_fd(const Vector& x, const Vector& u, double step = 1e-6) const;

  double lipschitz() const { return lipschitz_; }
  double jac_lower_bound() const { return jac_lower_; }
  const BoxSet& input_set() const { return input_set_; }
  const BoxSet& workspace() const { return workspace_; }

  /// Same dynamics with different certified constants and sets.
  AgentModel with_constants(double lipschitz, double jac_lower_bound, BoxSet input_set,
                            BoxSet workspace) const;

 private:
  std::string name_;
  std::size_t state_dim_;
  DynamicsFn eval_;
  JacobianFn jac_;
  double lipschitz_;
  double jac_lower_;
  BoxSet input_set_;
  BoxSet workspace_;
};

/// Deterministic disturbance w(t) with a sup-norm bound.
class DisturbanceSignal {
 public:
  using Fn = std::function<Vector(double t)>;
  DisturbanceSignal(std::string name, Fn eval, double bound);

  Vector eval(double t) const { return eval_(t); }
  double bound() const { return bound_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  Fn eval_;
  double bound_;
};

/// Time-indexed states with optional piecewise-constant inputs.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> inputs;  ///< empty, or one per interval

  std::size_t size() const { return times.size(); }
  bool consistent() const;
  /// Linear interpolation; clamps to the first/last state outside the time span.
  Vector state_at(double t) const;
};

using VectorField = std::function<Vector(double t, const Vector& x)>;

/// One classical Runge–Kutta 4 step.
Vector rk4_step(const VectorField& field, double t, const Vector& x, double dt);

/// Fixed-step RK4; returns n_steps + 1 states. Throws IntegrationDiverged.
Trajectory integrate_rk4(const VectorField& field, const Vector& x0, double t0, double dt,
                         std::size_t n_steps);

/// Two-state non-affine benchmark fleet member on [-5, 5]^2 with |u_j| <= 2.125.
AgentModel benchmark_model();

/// w(t) = (0.3 cos t, 0.2 sin 2t) with the nominal bound 0.3.
DisturbanceSignal benchmark_disturbance();

/// x' = u in n dimensions (J = I, L = 0 certified as `lipschitz_floor`).
AgentModel integrator_model(std::size_t n, BoxSet input_set, BoxSet workspace,
                            double lipschitz_floor = 1e-12);

/// x' = A x + B u with caller-certified constants.
AgentModel linear_model(Matrix A, Matrix B, double lipschitz, double jac_lower_bound,
                        BoxSet input_set, BoxSet workspace);

/// w == 0.
DisturbanceSignal zero_disturbance(std::size_t n);

/// Piecewise-constant samples uniform on the ball of radius `bound`, one per
/// `hold` seconds. A pure function of t for a fixed seed and stream.
DisturbanceSignal random_disturbance(std::size_t n, double bound, double hold,
                                     std::uint64_t seed, std::uint64_t stream);

/// Solve f(x, u) = 0 for u by Newton's method on the control Jacobian.
Vector equilibrium_input(const AgentModel& model, const Vector& x,
                         const std::optional<Vector>& guess = std::nullopt);

struct AssumptionReport {
  double min_eig = 0.0;             ///< min over the grid of lambda_min((J + J^T)/2)
  double lipschitz_estimate = 0.0;  ///< max ||f(x,u) - f(x',u)|| / ||x - x'|| over random pairs
  double f00_norm = 0.0;            ///< ||f(0, 0)||
  bool eig_ok = false;
  bool lipschitz_ok = false;
  bool f00_ok = false;
  Vector eig_witness_x, eig_witness_u;
  Vector lip_witness_x, lip_witness_x2, lip_witness_u;
  std::size_t grid_points = 0;
  std::size_t lipschitz_pairs = 0;

  bool ok() const { return eig_ok && lipschitz_ok && f00_ok; }
  /// Throws AssumptionViolation naming the first failing assumption and its witness.
  void throw_if_failed() const;
  std::string summary() const;
};

/// Grid check of the Jacobian eigenvalue bound over workspace x input set,
/// random-pair Lipschitz estimate, and f(0,0) = 0.
AssumptionReport verify_assumptions(const AgentModel& model, std::size_t grid_density,
                                    std::size_t lipschitz_pairs = 20000,
                                    std::uint64_t seed = 7);

}  // namespace tubempc
