#pragma once

/**
 * @file
 * @brief Offline tube synthesis and the ancillary feedback law.
 *
 * With u = u_bar - k (e - e_bar) and
 *
 *     k = k_lower + (L + 1 / (4 rho)) / J_lower,
 *
 * the deviation z = e - e_bar stays in the ball of radius
 *
 *     z_tilde = sqrt(rho) w_tilde / sqrt(k_lower J_lower)
 *
 * for every disturbance with ||w|| <= w_tilde.
 */

#include <cstdint>

#include "tubempc/dynamics.hpp"

namespace tubempc {

struct TubeParams {
  double rho = 1.0;
  double k_lower = 1.0;
  double k_gain = 0.0;
  double z_tilde = 0.0;
};

double compute_gain(double rho, double k_lower, double lipschitz, double jac_lower);

double compute_tube_radius(double rho, double w_tilde, double k_lower, double jac_lower);

/// Both closed forms at once.
TubeParams synthesize_tube(double rho, double k_lower, double lipschitz, double jac_lower,
                           double w_tilde);

/// kappa(e, e_bar) = -k (e - e_bar).
Vector ancillary_feedback(const Vector& e, const Vector& e_bar, double k_gain);

/// u = u_bar + correction.
Vector total_control(const Vector& u_bar, const Vector& correction);

struct RciOptions {
  std::size_t n_trials = 100;
  double horizon = 10.0;
  double step = 0.01;          ///< integration step
  double input_hold = 0.1;     ///< nominal input is resampled every input_hold seconds
  double slack = 0.02;         ///< relative containment slack
  double lyapunov_tol = 1e-9;
  std::uint64_t seed = 2024;
};

struct RciReport {
  double max_z_norm = 0.0;
  std::size_t lyapunov_violations = 0;
  std::size_t samples = 0;
  std::size_t trials_run = 0;
  std::size_t trials_truncated = 0;  ///< stopped early because a state left the workspace
  double z_tilde = 0.0;
  double slack = 0.0;

  bool passed() const {
    return max_z_norm <= z_tilde * (1.0 + slack) && lyapunov_violations == 0;
  }
};

/**
 * Monte-Carlo check that the tube is robustly invariant for the deviation
 * dynamics. Each trial draws a nominal start in the shrunken workspace and a
 * piecewise-constant nominal input in the shrunken input set, then integrates
 * real and nominal states together under u = u_bar - k z with z(0) = 0. Every
 * trial is run twice: once with the worst-case disturbance w = w_tilde z/||z||
 * and once with the supplied signal. At each sample the decrease
 *
 *     z' z_dot <= -k_lower J_lower ||z||^2 + rho w_tilde^2
 *
 * is checked wherever ||z|| > z_tilde. A trial stops if either state leaves
 * the workspace, where the certified constants no longer apply.
 */
RciReport validate_rci(const AgentModel& model, const TubeParams& tube,
                       const DisturbanceSignal& disturbance, const RciOptions& options = {});

}  // namespace tubempc
