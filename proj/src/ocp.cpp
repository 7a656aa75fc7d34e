#include "tubempc/ocp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tubempc/errors.hpp"
#include "tubempc/riccati.hpp"

namespace tubempc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_symmetric(const Matrix& M, const char* name) {
  if (M.rows() != M.cols() || M.rows() == 0) {
    throw DomainError(std::string("OcpWeights: ") + name + " must be square and non-empty");
  }
  if (!M.allFinite() || (M - M.transpose()).norm() > 1e-12 * std::max(1.0, M.norm())) {
    throw DomainError(std::string("OcpWeights: ") + name + " must be symmetric");
  }
}

double min_eigenvalue(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// One RK4 step of the nominal error dynamics, written with the same
// arithmetic as rk4_step so that prediction and closed loop agree bitwise.
struct StageData {
  Vector X[4];
  Vector k[4];
};

Vector nominal_step(const AgentModel& model, const Vector& x_des, const Vector& e,
                    const Vector& u, double h, StageData* stages = nullptr) {
  const double half = 0.5 * h;
  const Vector k1 = model.eval(e + x_des, u);
  const Vector X2 = e + half * k1;
  const Vector k2 = model.eval(X2 + x_des, u);
  const Vector X3 = e + half * k2;
  const Vector k3 = model.eval(X3 + x_des, u);
  const Vector X4 = e + h * k3;
  const Vector k4 = model.eval(X4 + x_des, u);
  if (stages != nullptr) {
    stages->X[0] = e;
    stages->X[1] = X2;
    stages->X[2] = X3;
    stages->X[3] = X4;
    stages->k[0] = k1;
    stages->k[1] = k2;
    stages->k[2] = k3;
    stages->k[3] = k4;
  }
  return e + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct ShootingResult {
  std::vector<Vector> states;
  double running = 0.0;
  double terminal = 0.0;
  bool diverged = false;
  std::size_t diverged_index = 0;
  Vector cost_gradient;
  std::vector<Matrix> sensitivities;  // aligned with the requested indices
};

// Forward simulation with optional exact sensitivities of the discrete map.
// `wanted` must be sorted; sensitivities are stored for those fine indices.
ShootingResult shoot(const OcpProblem& problem, const std::vector<Vector>& controls,
                     bool derivatives, const std::vector<std::size_t>& wanted = {}) {
  const AgentModel& model = *problem.model;
  const Matrix& Q = problem.weights.Q();
  const Matrix& R = problem.weights.R();
  const std::size_t N = problem.n_intervals;
  const std::size_t s = problem.substeps;
  const double h = problem.step();
  const auto n = static_cast<Eigen::Index>(model.state_dim());
  const Eigen::Index m = n;
  const Eigen::Index nv = static_cast<Eigen::Index>(N) * m;

  ShootingResult out;
  out.states.reserve(N * s + 1);
  out.states.push_back(problem.initial_error);

  Matrix S;
  std::size_t next_wanted = 0;
  if (derivatives) {
    S = Matrix::Zero(n, nv);
    out.cost_gradient = Vector::Zero(nv);
    out.sensitivities.reserve(wanted.size());
    while (next_wanted < wanted.size() && wanted[next_wanted] == 0) {
      out.sensitivities.push_back(S);
      ++next_wanted;
    }
  }

  const double w[4] = {1.0, 2.0, 2.0, 1.0};
  const double a[4] = {0.0, 0.5, 0.5, 1.0};
  StageData stages;
  Vector e = problem.initial_error;
  std::size_t index = 0;
  for (std::size_t j = 0; j < N; ++j) {
    const Vector& u = controls[j];
    const Vector du = u - problem.terminal.u_eq;
    const double lu = du.dot(R * du);
    const Eigen::Index col = static_cast<Eigen::Index>(j) * m;
    const Eigen::Index active = col + m;
    for (std::size_t i = 0; i < s; ++i) {
      const Vector next = nominal_step(model, problem.x_des, e, u, h, &stages);
      ++index;
      if (!next.allFinite()) {
        out.diverged = true;
        out.diverged_index = index;
        out.running = kInf;
        out.terminal = kInf;
        return out;
      }
      if (derivatives) {
        double inc = 0.0;
        Matrix dk_sum = Matrix::Zero(n, active);
        Matrix dk_prev;
        for (int q = 0; q < 4; ++q) {
          const Vector& X = stages.X[q];
          Matrix dX = S.leftCols(active);
          if (q > 0) dX += (a[q] * h) * dk_prev;
          const Vector x_abs = X + problem.x_des;
          Matrix dk = model.state_jacobian_fd(x_abs, u) * dX;
          dk.middleCols(col, m) += model.control_jacobian(x_abs, u);
          dk_sum += w[q] * dk;
          dk_prev = std::move(dk);
          inc += w[q] * X.dot(Q * X);
          out.cost_gradient.head(active).noalias() += (h / 6.0) * w[q] * 2.0 * (dX.transpose() * (Q * X));
        }
        inc += 6.0 * lu;
        out.cost_gradient.segment(col, m).noalias() += h * 2.0 * (R * du);
        out.running += (h / 6.0) * inc;
        S.leftCols(active) += (h / 6.0) * dk_sum;
        while (next_wanted < wanted.size() && wanted[next_wanted] == index) {
          out.sensitivities.push_back(S);
          ++next_wanted;
        }
      } else {
        // Same quadrature as the derivative branch, using the stage states.
        double inc = 6.0 * lu;
        for (int q = 0; q < 4; ++q) inc += w[q] * stages.X[q].dot(Q * stages.X[q]);
        out.running += (h / 6.0) * inc;
      }
      e = next;
      out.states.push_back(e);
    }
  }
  const Matrix& P = problem.weights.P();
  out.terminal = e.dot(P * e);
  if (derivatives) out.cost_gradient.noalias() += 2.0 * (S.transpose() * (P * e));
  return out;
}

Vector propagate_interval(const OcpProblem& problem, const Vector& e, const Vector& u) {
  Vector x = e;
  for (std::size_t i = 0; i < problem.substeps; ++i) {
    x = nominal_step(*problem.model, problem.x_des, x, u, problem.step());
  }
  return x;
}

}  // namespace

OcpWeights::OcpWeights(Matrix Q, Matrix R, Matrix P)
    : Q_(std::move(Q)), R_(std::move(R)), P_(std::move(P)) {
  check_symmetric(Q_, "Q");
  check_symmetric(R_, "R");
  check_symmetric(P_, "P");
  if (Q_.rows() != P_.rows()) throw DomainError("OcpWeights: Q and P dimensions differ");
  if (min_eigenvalue(Q_) < -1e-12) throw DomainError("OcpWeights: Q must be positive semi-definite");
  if (!(min_eigenvalue(R_) > 0.0)) throw DomainError("OcpWeights: R must be positive definite");
  if (!(min_eigenvalue(P_) > 0.0)) throw DomainError("OcpWeights: P must be positive definite");
}

void OcpProblem::validate() const {
  if (!model) throw DomainError("OcpProblem: no model");
  const auto n = static_cast<Eigen::Index>(model->state_dim());
  if (x_des.size() != n || initial_error.size() != n) {
    throw DomainError("OcpProblem: state dimension mismatch");
  }
  if (!initial_error.allFinite() || !x_des.allFinite()) {
    throw DomainError("OcpProblem: initial error and target must be finite");
  }
  if (!(horizon > 0.0) || n_intervals == 0 || substeps == 0) {
    throw DomainError("OcpProblem: horizon, interval count and substeps must be positive");
  }
  if (weights.Q().rows() != n || weights.R().rows() != n) {
    throw DomainError("OcpProblem: weight dimension mismatch");
  }
  if (static_cast<Eigen::Index>(state_box.dim()) != n ||
      static_cast<Eigen::Index>(input_box.dim()) != n) {
    throw DomainError("OcpProblem: constraint box dimension mismatch");
  }
  if (terminal.P.rows() != n || terminal.K_loc.rows() != n || terminal.u_eq.size() != n ||
      !(terminal.eta > 0.0)) {
    throw DomainError("OcpProblem: terminal ingredients malformed");
  }
  for (const CoupledConstraint& c : coupled) {
    if (!(c.clearance > 0.0)) throw DomainError("OcpProblem: clearance must be positive");
    if (c.neighbor_states.size() == 0) throw DomainError("OcpProblem: empty neighbor trajectory");
  }
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::optimal:
      return "optimal";
    case SolveStatus::feasible_suboptimal:
      return "feasible_suboptimal";
    case SolveStatus::infeasible:
      return "infeasible";
  }
  return "unknown";
}

CostEvaluation evaluate_cost(const OcpProblem& problem, const std::vector<Vector>& controls) {
  if (controls.size() != problem.n_intervals) {
    throw DomainError("evaluate_cost: expected one control per interval");
  }
  for (const Vector& u : controls) {
    if (!u.allFinite()) throw DomainError("evaluate_cost: non-finite control");
  }
  ShootingResult r = shoot(problem, controls, false);
  CostEvaluation out;
  const double h = problem.step();
  for (std::size_t i = 0; i < r.states.size(); ++i) {
    out.predicted.times.push_back(problem.t0 + static_cast<double>(i) * h);
  }
  out.predicted.states = std::move(r.states);
  out.running = r.running;
  out.terminal = r.terminal;
  out.cost = r.running + r.terminal;
  if (r.diverged) {
    out.diverged = true;
    out.diverged_at = problem.t0 + static_cast<double>(r.diverged_index) * h;
    out.cost = kInf;
    spdlog::debug("evaluate_cost: nominal prediction diverged at t = {}", out.diverged_at);
  }
  return out;
}

OcpTranscription::OcpTranscription(const OcpProblem& problem) : problem_(problem) {
  problem.validate();
  const std::size_t N = problem.n_intervals;
  const std::size_t s = problem.substeps;
  const std::size_t m = problem.input_dim();
  nv_ = N * m;
  lower_.resize(static_cast<Eigen::Index>(nv_));
  upper_.resize(static_cast<Eigen::Index>(nv_));
  for (std::size_t j = 0; j < N; ++j) {
    lower_.segment(static_cast<Eigen::Index>(j * m), static_cast<Eigen::Index>(m)) =
        problem.input_box.lower();
    upper_.segment(static_cast<Eigen::Index>(j * m), static_cast<Eigen::Index>(m)) =
        problem.input_box.upper();
  }
  // Knots and midpoints, skipping the fixed initial state.
  for (std::size_t i = 0; i < N; ++i) {
    if (s / 2 > 0) points_.push_back(i * s + s / 2);
    points_.push_back((i + 1) * s);
  }
  const double h = problem.step();
  for (const CoupledConstraint& c : problem.coupled) {
    std::vector<Vector> at;
    at.reserve(points_.size());
    for (std::size_t p : points_) {
      at.push_back(c.neighbor_states.state_at(problem.t0 + static_cast<double>(p) * h));
    }
    neighbor_at_points_.push_back(std::move(at));
  }
  nc_ = points_.size() * 2 * m + 1 + problem.coupled.size() * points_.size();
}

Vector OcpTranscription::pack(const std::vector<Vector>& controls) const {
  const auto m = static_cast<Eigen::Index>(problem_.input_dim());
  Vector x(static_cast<Eigen::Index>(nv_));
  for (std::size_t j = 0; j < controls.size(); ++j) {
    x.segment(static_cast<Eigen::Index>(j) * m, m) = controls[j];
  }
  return x;
}

std::vector<Vector> OcpTranscription::unpack(const Vector& x) const {
  const auto m = static_cast<Eigen::Index>(problem_.input_dim());
  std::vector<Vector> controls;
  for (std::size_t j = 0; j < problem_.n_intervals; ++j) {
    controls.push_back(x.segment(static_cast<Eigen::Index>(j) * m, m));
  }
  return controls;
}

void OcpTranscription::evaluate(const Vector& x, bool derivatives, NlpEvaluation& out) const {
  const std::vector<Vector> controls = unpack(x);
  const ShootingResult r = shoot(problem_, controls, derivatives, points_);
  const auto nc = static_cast<Eigen::Index>(nc_);
  const auto nv = static_cast<Eigen::Index>(nv_);
  out.constraints.resize(nc);
  if (r.diverged) {
    out.objective = kInf;
    out.constraints.setConstant(kInf);
    return;
  }
  out.objective = r.running + r.terminal;
  if (derivatives) {
    out.gradient = r.cost_gradient;
    out.jacobian = Matrix::Zero(nc, nv);
  }

  const auto n = static_cast<Eigen::Index>(problem_.input_dim());
  const Vector& lo = problem_.state_box.lower();
  const Vector& hi = problem_.state_box.upper();
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    const Vector& e = r.states[points_[k]];
    for (Eigen::Index c = 0; c < n; ++c) {
      out.constraints[row] = lo[c] - e[c];
      if (derivatives) out.jacobian.row(row) = -r.sensitivities[k].row(c);
      ++row;
      out.constraints[row] = e[c] - hi[c];
      if (derivatives) out.jacobian.row(row) = r.sensitivities[k].row(c);
      ++row;
    }
  }

  // Terminal level in length units, sqrt(e'Pe) - sqrt(eta), like the other rows.
  const Vector& eT = r.states.back();
  const Vector PeT = problem_.terminal.P * eT;
  const double level = std::sqrt(eT.dot(PeT));
  out.constraints[row] = level - std::sqrt(problem_.terminal.eta);
  if (derivatives && level > 0.0) {
    out.jacobian.row(row) = (PeT.transpose() * r.sensitivities.back()) / level;
  }
  ++row;

  for (std::size_t c = 0; c < problem_.coupled.size(); ++c) {
    const double clearance = problem_.coupled[c].clearance;
    for (std::size_t k = 0; k < points_.size(); ++k) {
      const Vector diff = r.states[points_[k]] + problem_.x_des - neighbor_at_points_[c][k];
      out.constraints[row] = (diff.squaredNorm() - clearance * clearance) / (2.0 * clearance);
      if (derivatives) {
        out.jacobian.row(row) = (diff.transpose() * r.sensitivities[k]) / clearance;
      }
      ++row;
    }
  }
}

std::vector<Vector> local_law_rollout(const OcpProblem& problem) {
  std::vector<Vector> controls;
  Vector e = problem.initial_error;
  for (std::size_t j = 0; j < problem.n_intervals; ++j) {
    Vector u = problem.input_box.project(problem.terminal.local_input(e));
    controls.push_back(u);
    e = propagate_interval(problem, e, u);
    if (!e.allFinite()) {
      // Fall back to the equilibrium input for the rest of the horizon.
      const Vector u_eq = problem.input_box.project(problem.terminal.u_eq);
      while (controls.size() < problem.n_intervals) controls.push_back(u_eq);
      break;
    }
  }
  return controls;
}

namespace {

OcpSolution solve_from(const OcpProblem& problem, const OcpTranscription& nlp, const Vector& x0,
                       const SolverOptions& options) {
  const AlResult r = solve_augmented_lagrangian(nlp, x0, options.al);
  OcpSolution sol;
  sol.controls = nlp.unpack(r.x);
  const CostEvaluation eval = evaluate_cost(problem, sol.controls);
  sol.predicted = eval.predicted;
  sol.cost = eval.cost;
  sol.kkt_residual = r.kkt_residual;
  sol.max_violation = r.max_violation;
  sol.inner_iterations = r.inner_iterations;
  sol.outer_iterations = r.outer_iterations;
  if (r.max_violation > options.infeasible_tol || eval.diverged) {
    sol.status = SolveStatus::infeasible;
  } else if (r.converged) {
    sol.status = SolveStatus::optimal;
  } else {
    sol.status = SolveStatus::feasible_suboptimal;
  }
  return sol;
}

}  // namespace

OcpSolution solve_dfhocp(const OcpProblem& problem,
                         const std::optional<std::vector<Vector>>& warm_start,
                         const SolverOptions& options) {
  const OcpTranscription nlp(problem);
  if (warm_start && warm_start->size() != problem.n_intervals) {
    throw DomainError("solve_dfhocp: warm start must have one control per interval");
  }
  const bool warm = warm_start.has_value();
  const Vector x0 = nlp.pack(warm ? *warm_start : local_law_rollout(problem));
  OcpSolution sol = solve_from(problem, nlp, x0, options);
  if (warm && options.retry_cold && sol.status == SolveStatus::infeasible) {
    spdlog::debug("solve_dfhocp: warm start ended infeasible (violation {:.3e}), retrying cold",
                  sol.max_violation);
    OcpSolution cold = solve_from(problem, nlp, nlp.pack(local_law_rollout(problem)), options);
    cold.inner_iterations += sol.inner_iterations;
    cold.outer_iterations += sol.outer_iterations;
    if (cold.status != SolveStatus::infeasible || cold.max_violation < sol.max_violation) {
      sol = std::move(cold);
    }
  }
  return sol;
}

std::vector<Vector> shift_solution(const OcpProblem& previous_problem,
                                   const OcpSolution& previous, double delta) {
  const std::size_t N = previous_problem.n_intervals;
  if (previous.controls.size() != N) {
    throw DomainError("shift_solution: previous solution has the wrong length");
  }
  const double ratio = delta / previous_problem.interval();
  const auto drop = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(drop)) > 1e-9 || drop > N) {
    throw DomainError("shift_solution: delta must be a whole number of intervals within the horizon");
  }
  std::vector<Vector> controls(previous.controls.begin() + static_cast<std::ptrdiff_t>(drop),
                               previous.controls.end());
  Vector e = previous.predicted.states.back();
  while (controls.size() < N) {
    const Vector u = previous_problem.terminal.local_input(e);
    controls.push_back(u);
    e = propagate_interval(previous_problem, e, u);
  }
  return controls;
}

AdmissibilityReport check_admissibility(const OcpProblem& problem,
                                        const std::vector<Vector>& controls, double tol) {
  AdmissibilityReport report;
  report.piecewise_continuous = controls.size() == problem.n_intervals;
  for (const Vector& u : controls) {
    if (u.size() != static_cast<Eigen::Index>(problem.input_dim()) || !u.allFinite()) {
      report.piecewise_continuous = false;
    }
  }
  if (!report.piecewise_continuous) {
    report.worst_input_margin = -kInf;
    report.worst_state_margin = -kInf;
    report.terminal_margin = -kInf;
    report.worst_coupled_margin = -kInf;
    return report;
  }

  report.worst_input_margin = kInf;
  for (const Vector& u : controls) {
    report.worst_input_margin = std::min(report.worst_input_margin, problem.input_box.margin(u));
  }
  report.inputs_ok = report.worst_input_margin >= -kMembershipTol;

  const std::size_t fine = 2 * problem.substeps;
  const double h = problem.interval() / static_cast<double>(fine);
  const AgentModel& model = *problem.model;
  report.worst_state_margin = problem.state_box.margin(problem.initial_error);
  report.worst_coupled_margin = kInf;
  auto coupled_margin = [&](double t, const Vector& e) {
    for (const CoupledConstraint& c : problem.coupled) {
      const double dist = (e + problem.x_des - c.neighbor_states.state_at(t)).norm();
      report.worst_coupled_margin = std::min(report.worst_coupled_margin, c.clearance - dist);
    }
  };
  coupled_margin(problem.t0, problem.initial_error);

  Vector e = problem.initial_error;
  bool diverged = false;
  for (std::size_t j = 0; j < problem.n_intervals && !diverged; ++j) {
    const Vector u = controls[j];
    const VectorField field = [&model, &problem, u](double, const Vector& x) {
      return model.eval(x + problem.x_des, u);
    };
    const double t_start = problem.t0 + static_cast<double>(j) * problem.interval();
    try {
      const Trajectory seg = integrate_rk4(field, e, t_start, h, fine);
      for (std::size_t i = 1; i < seg.size(); ++i) {
        report.worst_state_margin =
            std::min(report.worst_state_margin, problem.state_box.margin(seg.states[i]));
        coupled_margin(seg.times[i], seg.states[i]);
      }
      e = seg.states.back();
    } catch (const IntegrationDiverged&) {
      diverged = true;
    }
  }
  if (diverged) {
    report.worst_state_margin = -kInf;
    report.terminal_margin = -kInf;
    return report;
  }
  if (problem.coupled.empty()) report.worst_coupled_margin = 0.0;
  report.states_ok = report.worst_state_margin >= -tol;
  report.terminal_margin = problem.terminal.eta - problem.terminal.level(e);
  report.terminal_ok = report.terminal_margin >= -tol;
  return report;
}

// ---------------------------------------------------------------------------
// Terminal ingredients

namespace {

std::vector<Vector> level_set_samples(const Matrix& P, double eta, std::size_t boundary) {
  const Eigen::Index n = P.rows();
  const Eigen::LLT<Matrix> llt(P);
  std::vector<Vector> dirs;
  if (n == 2) {
    for (std::size_t i = 0; i < boundary; ++i) {
      const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(boundary);
      Vector d(2);
      d << std::cos(th), std::sin(th);
      dirs.push_back(d);
    }
  } else if (n == 1) {
    dirs.push_back(Vector::Ones(1));
    dirs.push_back(-Vector::Ones(1));
  } else {
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < boundary; ++i) {
      Vector d(n);
      for (Eigen::Index c = 0; c < n; ++c) d[c] = normal(rng);
      dirs.push_back(d.normalized());
    }
  }
  // e = sqrt(eta) L^{-T} d gives e' P e = eta for unit d.
  std::vector<Vector> out;
  const double shells[4] = {1.0, 0.75, 0.5, 0.25};
  for (double shell : shells) {
    for (std::size_t i = 0; i < dirs.size(); i += (shell == 1.0 ? 1 : 2)) {
      out.push_back(std::sqrt(eta) * shell * llt.matrixU().solve(dirs[i]));
    }
  }
  return out;
}

}  // namespace

TerminalCheck check_terminal(const AgentModel& model, const Vector& x_des, const Matrix& Q,
                             const Matrix& R, const BoxSet& input_box, const BoxSet& state_box,
                             const TerminalIngredients& terminal, std::size_t boundary_samples,
                             double tol) {
  TerminalCheck check;
  check.worst_input_margin = kInf;
  check.worst_decrease = -kInf;
  check.worst_invariance = -kInf;
  for (const Vector& e : level_set_samples(terminal.P, terminal.eta, boundary_samples)) {
    const Vector u = terminal.local_input(e);
    check.worst_input_margin = std::min(check.worst_input_margin, input_box.margin(u));
    const Vector du = u - terminal.u_eq;
    const double vdot = 2.0 * (terminal.P * e).dot(model.eval(e + x_des, u));
    check.worst_invariance = std::max(check.worst_invariance, vdot);
    check.worst_decrease = std::max(check.worst_decrease, vdot + e.dot(Q * e) + du.dot(R * du));
    ++check.samples;
  }
  check.input_ok = check.worst_input_margin >= -tol;
  check.decrease_ok = check.worst_decrease <= tol;
  check.invariant_ok = check.worst_invariance <= tol;

  // Exact extent of the ellipsoid along each axis: sqrt(eta (P^-1)_jj).
  const Matrix Pinv = terminal.P.inverse();
  check.inside_state_box = true;
  for (Eigen::Index j = 0; j < Pinv.rows(); ++j) {
    const double reach = std::sqrt(terminal.eta * Pinv(j, j));
    if (reach > state_box.upper()[j] + tol || -reach < state_box.lower()[j] - tol) {
      check.inside_state_box = false;
    }
  }
  return check;
}

TerminalSynthesis synthesize_terminal(const AgentModel& model, const Vector& x_des,
                                      const Matrix& Q, const Matrix& R, const BoxSet& input_box,
                                      const BoxSet& state_box, const TerminalOptions& options) {
  TerminalSynthesis out;
  TerminalIngredients& term = out.terminal;
  term.u_eq = equilibrium_input(model, x_des);
  const auto n = static_cast<Eigen::Index>(model.state_dim());
  const Matrix A = model.state_jacobian_fd(x_des, term.u_eq);
  const Matrix B = model.control_jacobian(x_des, term.u_eq);
  const Matrix Qm = Q + options.riccati_margin * Matrix::Identity(n, n);
  const Matrix P_lqr = solve_care(A, B, Qm, R);
  term.K_loc = -R.ldlt().solve(B.transpose() * P_lqr);
  term.P = options.fixed_P.value_or(P_lqr);

  auto check_at = [&](double eta) {
    TerminalIngredients trial = term;
    trial.eta = eta;
    return check_terminal(model, x_des, Q, R, input_box, state_box, trial,
                          options.boundary_samples, options.tol);
  };

  if (options.fixed_eta) {
    term.eta = *options.fixed_eta;
    out.check = check_at(term.eta);
    if (!out.check.ok()) {
      spdlog::warn(
          "terminal set eta = {} fails sampled verification (input margin {:.3e}, "
          "worst decrease {:.3e}, inside state box {})",
          term.eta, out.check.worst_input_margin, out.check.worst_decrease,
          out.check.inside_state_box);
    }
    return out;
  }

  double hi = options.eta_start;
  TerminalCheck best = check_at(hi);
  if (best.ok()) {
    term.eta = hi;
    out.check = best;
    out.eta_bisected = true;
    return out;
  }
  double lo = 0.0;
  for (int it = 0; it < options.bisection_steps; ++it) {
    const double mid = 0.5 * (lo + hi);
    TerminalCheck c = check_at(mid);
    if (c.ok()) {
      lo = mid;
      best = c;
    } else {
      hi = mid;
    }
  }
  if (lo < options.eta_floor) {
    std::ostringstream msg;
    msg << "synthesize_terminal: terminal level collapsed below " << options.eta_floor
        << " for target [" << x_des.transpose() << "]";
    throw TerminalSetDegenerate(msg.str());
  }
  term.eta = lo;
  out.check = best;
  out.eta_bisected = true;
  return out;
}

}  // namespace tubempc
