#pragma once

/**
 * @file
 * @brief Per-agent finite-horizon optimal control in error coordinates.
 *
 * For an agent with target x_des the nominal error e_bar = x_bar - x_des obeys
 * e_bar' = f(e_bar + x_des, u_bar). Each sampling instant the agent minimizes
 *
 *     e_bar(T)' P e_bar(T) + integral_0^T e_bar' Q e_bar + v' R v ds,  v = u_bar - u_eq,
 *
 * where u_eq holds x_des at rest (zero whenever x_des is an equilibrium of
 * the unforced model)
 * over piecewise-constant inputs in the tightened input box, subject to the
 * tightened state box, the terminal level set e' P e <= eta, and distance
 * constraints against neighbor trajectories. The problem is transcribed by
 * single shooting with fixed-step RK4 and exact forward sensitivities, then
 * solved with the augmented Lagrangian in nlp.hpp.
 */

#include <memory>
#include <optional>
#include <vector>

#include "tubempc/dynamics.hpp"
#include "tubempc/nlp.hpp"
#include "tubempc/set_algebra.hpp"

namespace tubempc {

/// Cost weights; validated at construction (Q PSD, R and P PD, all symmetric).
class OcpWeights {
 public:
  OcpWeights(Matrix Q, Matrix R, Matrix P);
  const Matrix& Q() const { return Q_; }
  const Matrix& R() const { return R_; }
  const Matrix& P() const { return P_; }

 private:
  Matrix Q_, R_, P_;
};

/// Terminal set {e : e' P e <= eta} with local law u_loc(e) = u_eq + K e.
struct TerminalIngredients {
  Matrix P;
  double eta = 0.0;
  Matrix K_loc;
  Vector u_eq;  ///< input holding x_des at rest

  Vector local_input(const Vector& e) const { return u_eq + K_loc * e; }
  double level(const Vector& e) const { return e.dot(P * e); }
};

struct TerminalOptions {
  double riccati_margin = 0.1;  ///< Q + margin I in the Riccati equation
  double eta_start = 1.0;
  int bisection_steps = 40;
  std::size_t boundary_samples = 1000;
  double tol = 1e-8;
  double eta_floor = 1e-8;
  std::optional<Matrix> fixed_P;    ///< use this P instead of the Riccati solution
  std::optional<double> fixed_eta;  ///< use this level instead of bisection
};

/// Sampled verification of the two local-controller conditions on a level set.
struct TerminalCheck {
  bool input_ok = false;      ///< u_loc(e) in the tightened input box
  bool decrease_ok = false;   ///< dV/de f + F <= 0
  bool inside_state_box = false;
  bool invariant_ok = false;  ///< dV/de f <= 0 (level set invariant, no cost term)
  double worst_input_margin = 0.0;
  double worst_decrease = 0.0;  ///< max of dV/de f + F over samples
  double worst_invariance = 0.0;  ///< max of dV/de f over samples
  std::size_t samples = 0;
  bool ok() const { return input_ok && decrease_ok && inside_state_box; }
};

/**
 * Linearize at (x_des, u_eq), solve the Riccati equation for K_loc (and P
 * unless fixed), then pick eta. The decrease condition uses the input cost
 * relative to u_eq, which coincides with u' R u whenever x_des is an
 * equilibrium under zero input.
 */
struct TerminalSynthesis {
  TerminalIngredients terminal;
  TerminalCheck check;
  bool eta_bisected = false;
};

TerminalSynthesis synthesize_terminal(const AgentModel& model, const Vector& x_des,
                                      const Matrix& Q, const Matrix& R, const BoxSet& input_box,
                                      const BoxSet& state_box, const TerminalOptions& options = {});

TerminalCheck check_terminal(const AgentModel& model, const Vector& x_des, const Matrix& Q,
                             const Matrix& R, const BoxSet& input_box, const BoxSet& state_box,
                             const TerminalIngredients& terminal, std::size_t boundary_samples,
                             double tol = 1e-8);

/// Another agent's predicted absolute positions and the distance it must stay within.
struct CoupledConstraint {
  int neighbor = 0;
  Trajectory neighbor_states;  ///< absolute coordinates
  double clearance = 0.0;
};

struct OcpProblem {
  std::shared_ptr<const AgentModel> model;
  Vector x_des;
  double t0 = 0.0;
  double horizon = 0.5;
  std::size_t n_intervals = 5;
  std::size_t substeps = 10;  ///< RK4 steps per interval
  OcpWeights weights{Matrix::Identity(1, 1), Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  BoxSet state_box;
  BoxSet input_box;
  TerminalIngredients terminal;
  std::vector<CoupledConstraint> coupled;
  Vector initial_error;

  double interval() const { return horizon / static_cast<double>(n_intervals); }
  double step() const { return interval() / static_cast<double>(substeps); }
  std::size_t input_dim() const { return model->state_dim(); }
  /// Throws DomainError if the problem is malformed.
  void validate() const;
};

enum class SolveStatus { optimal, feasible_suboptimal, infeasible };
const char* to_string(SolveStatus status);

struct OcpSolution {
  std::vector<Vector> controls;
  Trajectory predicted;  ///< nominal error on the fine grid, absolute times
  double cost = 0.0;
  SolveStatus status = SolveStatus::infeasible;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  int inner_iterations = 0;
  int outer_iterations = 0;
};

struct CostEvaluation {
  double cost = 0.0;
  double running = 0.0;   ///< integral part
  double terminal = 0.0;  ///< e(T)' P e(T)
  Trajectory predicted;
  bool diverged = false;
  double diverged_at = 0.0;
};

/// Propagate the nominal error under piecewise-constant controls on the fine
/// grid. This is the only integrator for nominal states: the closed loop
/// reuses it so that predictions and realized nominal states agree bitwise.
CostEvaluation evaluate_cost(const OcpProblem& problem, const std::vector<Vector>& controls);

/// The NLP the solver sees; public so that derivatives can be tested directly.
class OcpTranscription : public NonlinearProgram {
 public:
  explicit OcpTranscription(const OcpProblem& problem);

  std::size_t num_variables() const override { return nv_; }
  std::size_t num_constraints() const override { return nc_; }
  const Vector& lower() const override { return lower_; }
  const Vector& upper() const override { return upper_; }
  void evaluate(const Vector& x, bool derivatives, NlpEvaluation& out) const override;

  Vector pack(const std::vector<Vector>& controls) const;
  std::vector<Vector> unpack(const Vector& x) const;
  /// Fine-grid indices at which state and coupled constraints are imposed.
  const std::vector<std::size_t>& constraint_points() const { return points_; }

 private:
  const OcpProblem& problem_;
  std::size_t nv_ = 0;
  std::size_t nc_ = 0;
  Vector lower_, upper_;
  std::vector<std::size_t> points_;
  std::vector<std::vector<Vector>> neighbor_at_points_;  // [constraint][point]
};

struct SolverOptions {
  AlOptions al;
  double infeasible_tol = 1e-4;
  bool retry_cold = true;  ///< re-solve from the local-law rollout if a warm start ends infeasible
};

/// Cold start: the local law, clipped to the input box, applied at each
/// interval start along its own rollout.
std::vector<Vector> local_law_rollout(const OcpProblem& problem);

/// Throws SolverDiverged if the start point already produces a non-finite cost.
OcpSolution solve_dfhocp(const OcpProblem& problem,
                         const std::optional<std::vector<Vector>>& warm_start = std::nullopt,
                         const SolverOptions& options = {});

/// Drop the first `delta` seconds of controls and append the local law along
/// the continuation from the predicted terminal state.
std::vector<Vector> shift_solution(const OcpProblem& previous_problem,
                                   const OcpSolution& previous, double delta);

struct AdmissibilityReport {
  bool piecewise_continuous = false;
  bool inputs_ok = false;
  bool states_ok = false;
  bool terminal_ok = false;
  double worst_input_margin = 0.0;  ///< signed slack, negative when violated
  double worst_state_margin = 0.0;
  double terminal_margin = 0.0;     ///< eta - e(T)' P e(T)
  double worst_coupled_margin = 0.0;  ///< informational, not part of admissible()
  bool admissible() const { return piecewise_continuous && inputs_ok && states_ok && terminal_ok; }
};

/// Re-integrates at twice the transcription resolution and checks the four
/// admissibility conditions.
AdmissibilityReport check_admissibility(const OcpProblem& problem,
                                        const std::vector<Vector>& controls,
                                        double tol = 1e-6);

}  // namespace tubempc
