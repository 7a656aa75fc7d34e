#include "tubempc/dynamics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tubempc/errors.hpp"

namespace tubempc {

AgentModel::AgentModel(std::string name, std::size_t state_dim, DynamicsFn eval,
                       JacobianFn control_jacobian, double lipschitz, double jac_lower_bound,
                       BoxSet input_set, BoxSet workspace)
    : name_(std::move(name)),
      state_dim_(state_dim),
      eval_(std::move(eval)),
      jac_(std::move(control_jacobian)),
      lipschitz_(lipschitz),
      jac_lower_(jac_lower_bound),
      input_set_(std::move(input_set)),
      workspace_(std::move(workspace)) {
  if (state_dim_ == 0) throw DomainError("AgentModel: state dimension must be positive");
  if (!(lipschitz_ > 0.0)) throw DomainError("AgentModel: Lipschitz constant must be positive");
  if (!(jac_lower_ > 0.0)) throw DomainError("AgentModel: Jacobian lower bound must be positive");
  if (input_set_.dim() != state_dim_ || workspace_.dim() != state_dim_) {
    throw DomainError("AgentModel: input set and workspace must match the state dimension");
  }
}

AgentModel AgentModel::with_constants(double lipschitz, double jac_lower_bound,
                                      BoxSet input_set, BoxSet workspace) const {
  return AgentModel(name_, state_dim_, eval_, jac_, lipschitz, jac_lower_bound,
                    std::move(input_set), std::move(workspace));
}

Matrix AgentModel::state_jacobian_fd(const Vector& x, const Vector& u, double step) const {
  const auto n = static_cast<Eigen::Index>(state_dim_);
  Matrix jac(n, n);
  Vector xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const Vector fp = eval_(xp, u);
    xp[j] = x[j] - h;
    const Vector fm = eval_(xp, u);
    xp[j] = x[j];
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

DisturbanceSignal::DisturbanceSignal(std::string name, Fn eval, double bound)
    : name_(std::move(name)), eval_(std::move(eval)), bound_(bound) {
  if (!(bound_ >= 0.0)) throw DomainError("DisturbanceSignal: negative bound");
}

bool Trajectory::consistent() const {
  if (states.size() != times.size()) return false;
  if (!inputs.empty() && inputs.size() + 1 != times.size()) return false;
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) return false;
  }
  return true;
}

Vector Trajectory::state_at(double t) const {
  if (times.empty()) throw DomainError("Trajectory::state_at: empty trajectory");
  if (t <= times.front()) return states.front();
  if (t >= times.back()) return states.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto hi = static_cast<std::size_t>(it - times.begin());
  const std::size_t lo = hi - 1;
  const double s = (t - times[lo]) / (times[hi] - times[lo]);
  return (1.0 - s) * states[lo] + s * states[hi];
}

Vector rk4_step(const VectorField& field, double t, const Vector& x, double dt) {
  const double half = 0.5 * dt;
  const Vector k1 = field(t, x);
  const Vector k2 = field(t + half, x + half * k1);
  const Vector k3 = field(t + half, x + half * k2);
  const Vector k4 = field(t + dt, x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate_rk4(const VectorField& field, const Vector& x0, double t0, double dt,
                         std::size_t n_steps) {
  if (!(dt > 0.0)) throw DomainError("integrate_rk4: step must be positive");
  Trajectory traj;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  traj.times.push_back(t0);
  traj.states.push_back(x0);
  Vector x = x0;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    x = rk4_step(field, t, x, dt);
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "integration diverged at t = " << t + dt;
      throw IntegrationDiverged(t + dt, msg.str());
    }
    traj.times.push_back(t0 + static_cast<double>(k + 1) * dt);
    traj.states.push_back(x);
  }
  return traj;
}

AgentModel benchmark_model() {
  auto eval = [](const Vector& x, const Vector& u) {
    Vector dx(2);
    // (0.1 - 0.1 e^{-y}) / (1 + e^{-y}) == 0.1 tanh(y / 2), without overflow for y << 0.
    dx[0] = 0.1 * std::tanh(0.5 * x[1]) + 0.25 * x[0] * x[0] + 2.0 * u[0];
    dx[1] = 0.25 * x[0] * x[0] + u[1] + 0.1 * u[1] * u[1] * u[1];
    return dx;
  };
  auto jac = [](const Vector&, const Vector& u) {
    Matrix j = Matrix::Zero(2, 2);
    j(0, 0) = 2.0;
    j(1, 1) = 1.0 + 0.3 * u[1] * u[1];
    return j;
  };
  return AgentModel("benchmark", 2, eval, jac, 2.5, 1.0, BoxSet::symmetric(2, 2.125),
                    BoxSet::symmetric(2, 5.0));
}

DisturbanceSignal benchmark_disturbance() {
  return DisturbanceSignal(
      "benchmark",
      [](double t) {
        Vector w(2);
        w << 0.3 * std::cos(t), 0.2 * std::sin(2.0 * t);
        return w;
      },
      0.3);
}

AgentModel integrator_model(std::size_t n, BoxSet input_set, BoxSet workspace,
                            double lipschitz_floor) {
  const auto dim = static_cast<Eigen::Index>(n);
  return AgentModel(
      "integrator", n, [](const Vector&, const Vector& u) { return u; },
      [dim](const Vector&, const Vector&) { return Matrix::Identity(dim, dim); },
      lipschitz_floor, 1.0, std::move(input_set), std::move(workspace));
}

AgentModel linear_model(Matrix A, Matrix B, double lipschitz, double jac_lower_bound,
                        BoxSet input_set, BoxSet workspace) {
  if (A.rows() != A.cols() || B.rows() != A.rows() || B.cols() != A.rows()) {
    throw DomainError("linear_model: A and B must be square of equal size");
  }
  const auto n = static_cast<std::size_t>(A.rows());
  return AgentModel(
      "linear", n, [A, B](const Vector& x, const Vector& u) -> Vector { return A * x + B * u; },
      [B](const Vector&, const Vector&) -> Matrix { return B; }, lipschitz, jac_lower_bound,
      std::move(input_set), std::move(workspace));
}

DisturbanceSignal zero_disturbance(std::size_t n) {
  const auto dim = static_cast<Eigen::Index>(n);
  return DisturbanceSignal("zero", [dim](double) { return Vector::Zero(dim); }, 0.0);
}

DisturbanceSignal random_disturbance(std::size_t n, double bound, double hold,
                                     std::uint64_t seed, std::uint64_t stream) {
  if (!(hold > 0.0)) throw DomainError("random_disturbance: hold must be positive");
  const auto dim = static_cast<Eigen::Index>(n);
  return DisturbanceSignal(
      "random",
      [=](double t) {
        const auto slot = static_cast<std::int64_t>(std::floor(t / hold));
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(static_cast<std::uint64_t>(slot)),
                          static_cast<std::uint32_t>(static_cast<std::uint64_t>(slot) >> 32)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> unit;
        Vector dir(dim);
        for (Eigen::Index j = 0; j < dim; ++j) dir[j] = normal(rng);
        const double norm = dir.norm();
        if (norm == 0.0 || bound == 0.0) return Vector(Vector::Zero(dim));
        const double radius = bound * std::pow(unit(rng), 1.0 / static_cast<double>(dim));
        return Vector(dir * (radius / norm));
      },
      bound);
}

Vector equilibrium_input(const AgentModel& model, const Vector& x,
                         const std::optional<Vector>& guess) {
  const auto n = static_cast<Eigen::Index>(model.state_dim());
  Vector u = guess.value_or(Vector::Zero(n));
  for (int it = 0; it < 100; ++it) {
    const Vector r = model.eval(x, u);
    if (r.norm() < 1e-13) return u;
    const Matrix J = model.control_jacobian(x, u);
    Eigen::FullPivLU<Matrix> lu(J);
    if (!lu.isInvertible()) break;
    Vector step = lu.solve(r);
    // Backtrack on the residual norm so the cubic terms cannot throw Newton off.
    double alpha = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      if (model.eval(x, u - alpha * step).norm() < r.norm()) break;
      alpha *= 0.5;
    }
    u -= alpha * step;
  }
  if (model.eval(x, u).norm() < 1e-10) return u;
  std::ostringstream msg;
  msg << "equilibrium_input: no input holds x = [" << x.transpose() << "] at rest";
  throw AssumptionViolation(msg.str());
}

namespace {

double min_sym_eig(const Matrix& J) {
  const Matrix S = 0.5 * (J + J.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

AssumptionReport verify_assumptions(const AgentModel& model, std::size_t grid_density,
                                    std::size_t lipschitz_pairs, std::uint64_t seed) {
  if (grid_density < 2) throw DomainError("verify_assumptions: grid density must be >= 2");
  const auto n = static_cast<Eigen::Index>(model.state_dim());
  const BoxSet& D = model.workspace();
  const BoxSet& U = model.input_set();

  AssumptionReport rep;
  rep.min_eig = std::numeric_limits<double>::infinity();

  // Uniform tensor grid over D x U, enumerated as a mixed-radix counter.
  const auto dims = static_cast<std::size_t>(2 * n);
  std::vector<std::size_t> idx(dims, 0);
  const double denom = static_cast<double>(grid_density - 1);
  Vector x(n), u(n);
  for (;;) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sx = static_cast<double>(idx[static_cast<std::size_t>(j)]) / denom;
      const double su = static_cast<double>(idx[static_cast<std::size_t>(j + n)]) / denom;
      x[j] = D.lower()[j] + sx * (D.upper()[j] - D.lower()[j]);
      u[j] = U.lower()[j] + su * (U.upper()[j] - U.lower()[j]);
    }
    const double e = min_sym_eig(model.control_jacobian(x, u));
    if (e < rep.min_eig) {
      rep.min_eig = e;
      rep.eig_witness_x = x;
      rep.eig_witness_u = u;
    }
    ++rep.grid_points;
    std::size_t d = 0;
    while (d < dims && ++idx[d] == grid_density) idx[d++] = 0;
    if (d == dims) break;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sample = [&](const BoxSet& box) {
    Vector v(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      v[j] = box.lower()[j] + unit(rng) * (box.upper()[j] - box.lower()[j]);
    }
    return v;
  };
  for (std::size_t p = 0; p < lipschitz_pairs; ++p) {
    const Vector xa = sample(D);
    const Vector xb = sample(D);
    const Vector uu = sample(U);
    const double dx = (xa - xb).norm();
    if (dx < 1e-12) continue;
    const double ratio = (model.eval(xa, uu) - model.eval(xb, uu)).norm() / dx;
    if (ratio > rep.lipschitz_estimate) {
      rep.lipschitz_estimate = ratio;
      rep.lip_witness_x = xa;
      rep.lip_witness_x2 = xb;
      rep.lip_witness_u = uu;
    }
    ++rep.lipschitz_pairs;
  }

  rep.f00_norm = model.eval(Vector::Zero(n), Vector::Zero(n)).norm();
  rep.eig_ok = rep.min_eig >= model.jac_lower_bound() - 1e-9;
  rep.lipschitz_ok = rep.lipschitz_estimate <= model.lipschitz() + 1e-6;
  rep.f00_ok = rep.f00_norm <= 1e-12;
  return rep;
}

void AssumptionReport::throw_if_failed() const {
  std::ostringstream msg;
  if (!f00_ok) {
    msg << "f(0,0) != 0: norm " << f00_norm;
    throw AssumptionViolation(msg.str());
  }
  if (!eig_ok) {
    msg << "Jacobian eigenvalue bound violated: lambda_min = " << min_eig << " at x = ["
        << eig_witness_x.transpose() << "], u = [" << eig_witness_u.transpose() << "]";
    throw AssumptionViolation(msg.str());
  }
  if (!lipschitz_ok) {
    msg << "Lipschitz bound violated: estimate " << lipschitz_estimate << " between x = ["
        << lip_witness_x.transpose() << "] and x' = [" << lip_witness_x2.transpose()
        << "], u = [" << lip_witness_u.transpose() << "]";
    throw AssumptionViolation(msg.str());
  }
}

std::string AssumptionReport::summary() const {
  std::ostringstream out;
  out << "min_eig=" << min_eig << (eig_ok ? " ok" : " FAIL") << " (" << grid_points
      << " grid points); lipschitz_estimate=" << lipschitz_estimate
      << (lipschitz_ok ? " ok" : " FAIL") << " (" << lipschitz_pairs
      << " pairs); f00_norm=" << f00_norm << (f00_ok ? " ok" : " FAIL")
      << "; note: sampled check, not a proof";
  return out.str();
}

}  // namespace tubempc
