#include "tubempc/tube.hpp"

#include <cmath>
#include <random>

#include "tubempc/errors.hpp"

namespace tubempc {

double compute_gain(double rho, double k_lower, double lipschitz, double jac_lower) {
  if (!(rho > 0.0) || !(k_lower > 0.0) || !(lipschitz > 0.0) || !(jac_lower > 0.0)) {
    throw DomainError("compute_gain: rho, k_lower, L and J_lower must be positive");
  }
  return k_lower + (lipschitz + 1.0 / (4.0 * rho)) / jac_lower;
}

double compute_tube_radius(double rho, double w_tilde, double k_lower, double jac_lower) {
  if (!(rho > 0.0) || !(k_lower > 0.0) || !(jac_lower > 0.0)) {
    throw DomainError("compute_tube_radius: rho, k_lower and J_lower must be positive");
  }
  if (!(w_tilde >= 0.0)) throw DomainError("compute_tube_radius: negative disturbance bound");
  return std::sqrt(rho) * w_tilde / std::sqrt(k_lower * jac_lower);
}

TubeParams synthesize_tube(double rho, double k_lower, double lipschitz, double jac_lower,
                           double w_tilde) {
  TubeParams tube;
  tube.rho = rho;
  tube.k_lower = k_lower;
  tube.k_gain = compute_gain(rho, k_lower, lipschitz, jac_lower);
  tube.z_tilde = compute_tube_radius(rho, w_tilde, k_lower, jac_lower);
  return tube;
}

Vector ancillary_feedback(const Vector& e, const Vector& e_bar, double k_gain) {
  if (e.size() != e_bar.size()) throw DomainError("ancillary_feedback: dimension mismatch");
  return -k_gain * (e - e_bar);
}

Vector total_control(const Vector& u_bar, const Vector& correction) {
  if (u_bar.size() != correction.size()) throw DomainError("total_control: dimension mismatch");
  return u_bar + correction;
}

namespace {

Vector sample_box(const BoxSet& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector v(box.lower().size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    v[j] = box.lower()[j] + unit(rng) * (box.upper()[j] - box.lower()[j]);
  }
  return v;
}

BoxSet shrink_or_keep(const BoxSet& box, double r) {
  auto res = pontryagin_diff_box_ball(box, r);
  if (auto* b = std::get_if<BoxSet>(&res)) return *b;
  return box;
}

}  // namespace

RciReport validate_rci(const AgentModel& model, const TubeParams& tube,
                       const DisturbanceSignal& disturbance, const RciOptions& options) {
  const auto n = static_cast<Eigen::Index>(model.state_dim());
  const double w_tilde = disturbance.bound();
  const double k = tube.k_gain;
  const BoxSet& D = model.workspace();
  const BoxSet starts = shrink_or_keep(D, tube.z_tilde);
  auto u_res = pontryagin_diff_box_ball(model.input_set(), k * tube.z_tilde);
  if (std::holds_alternative<EmptySet>(u_res)) {
    throw DomainError("validate_rci: tube too large for the input set");
  }
  const BoxSet u_bar_set = std::get<BoxSet>(u_res);
  const double decay = tube.k_lower * model.jac_lower_bound();
  const double offset = tube.rho * w_tilde * w_tilde;

  RciReport rep;
  rep.z_tilde = tube.z_tilde;
  rep.slack = options.slack;

  std::mt19937_64 rng(options.seed);
  const auto steps = static_cast<std::size_t>(std::llround(options.horizon / options.step));
  const auto hold_steps =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.input_hold / options.step)));

  for (std::size_t trial = 0; trial < options.n_trials; ++trial) {
    const Vector x0 = sample_box(starts, rng);
    std::vector<Vector> inputs;
    for (std::size_t s = 0; s < steps; s += hold_steps) inputs.push_back(sample_box(u_bar_set, rng));

    for (int adversarial = 1; adversarial >= 0; --adversarial) {
      auto w_of = [&](double t, const Vector& z) -> Vector {
        if (adversarial) {
          const double zn = z.norm();
          if (zn > 0.0) return Vector(z * (w_tilde / zn));
          const Vector w = disturbance.eval(t);
          const double wn = w.norm();
          return wn > 0.0 ? Vector(w * (w_tilde / wn)) : w;
        }
        return disturbance.eval(t);
      };
      Vector u_bar;
      // state = [x; x_bar]
      VectorField field = [&](double t, const Vector& s) -> Vector {
        const Vector x = s.head(n);
        const Vector xb = s.tail(n);
        const Vector z = x - xb;
        const Vector u = total_control(u_bar, ancillary_feedback(x, xb, k));
        Vector ds(2 * n);
        ds.head(n) = model.eval(x, u) + w_of(t, z);
        ds.tail(n) = model.eval(xb, u_bar);
        return ds;
      };
      Vector s(2 * n);
      s << x0, x0;
      ++rep.trials_run;
      for (std::size_t step = 0; step < steps; ++step) {
        u_bar = inputs[step / hold_steps];
        const double t = static_cast<double>(step) * options.step;
        s = rk4_step(field, t, s, options.step);
        const Vector x = s.head(n);
        const Vector xb = s.tail(n);
        if (!s.allFinite() || !D.contains(x) || !D.contains(xb)) {
          ++rep.trials_truncated;
          break;
        }
        const Vector z = x - xb;
        const double zn = z.norm();
        rep.max_z_norm = std::max(rep.max_z_norm, zn);
        ++rep.samples;
        if (zn > tube.z_tilde) {
          const Vector ds = field(t + options.step, s);
          const Vector zdot = ds.head(n) - ds.tail(n);
          const double phidot = z.dot(zdot);
          if (phidot >= -decay * zn * zn + offset + options.lyapunov_tol) ++rep.lyapunov_violations;
        }
      }
    }
  }
  return rep;
}

}  // namespace tubempc
