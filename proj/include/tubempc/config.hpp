#pragma once

/**
 * @file
 * @brief Scenario files: parsing, validation and offline synthesis.
 *
 * The schema is documented in docs/config.md. load_config() returns a fully
 * derived scenario: tube gain and radius, tightened error and input boxes,
 * and terminal ingredients for every agent.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tubempc/coordinator.hpp"
#include "tubempc/dynamics.hpp"
#include "tubempc/ocp.hpp"

namespace tubempc {

enum class DisturbanceKind { benchmark, random, zero };

struct DisturbanceConfig {
  DisturbanceKind kind = DisturbanceKind::benchmark;
  double bound = 0.3;  ///< random only
  double hold = 0.1;   ///< random only: seconds per sample
};

struct AgentConfig {
  int id = 0;
  std::string dynamics = "benchmark";  ///< benchmark | integrator | linear
  Matrix A, B;                         ///< linear only
  double lipschitz = 0.0;
  double jac_lower = 0.0;
  double w_tilde = 0.0;
  double radius = 0.0;
  double sensing_range = 0.0;
  Vector x_init, x_des;
  BoxSet input_set;
  std::optional<BoxSet> error_box;  ///< overrides workspace shifted by -x_des
  double rho = 1.0;
  double k_lower = 1.0;
  Matrix Q, R;
  std::optional<Matrix> P;  ///< empty: Riccati solution
  std::optional<double> eta;  ///< empty: bisected
};

struct IssConfig {
  double slack = 0.05;
  double transient = 0.0;      ///< bound (a) is checked for t >= transient
  double tail_fraction = 0.2;  ///< bound (b) covers the last fraction of the run
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> horizon;
  std::optional<double> total_time;
  std::optional<std::size_t> substeps;
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 1;
  std::size_t state_dim = 2;
  BoxSet workspace;
  double epsilon = 0.01;
  double delta = 0.1;
  double horizon = 2.0;
  double total_time = 10.0;
  std::size_t substeps = 10;
  FirstRoundPolicy first_round = FirstRoundPolicy::skip;
  SolverOptions solver;
  TerminalOptions terminal;
  DisturbanceConfig disturbance;
  IssConfig iss;
  std::vector<AgentConfig> agents;

  // Derived by load_config / derive_scenario.
  std::vector<AgentSpec> specs;
  std::map<int, TerminalCheck> terminal_checks;

  std::size_t rounds() const;
  const AgentSpec& spec(int id) const;
  FleetSettings fleet_settings() const;
};

/// Parse YAML text. Throws ConfigError naming the offending field.
ScenarioConfig parse_config(const std::string& text, const ConfigOverrides& overrides = {});
ScenarioConfig load_config(const std::string& path, const ConfigOverrides& overrides = {});

/// Recompute all derived fields from the raw agent blocks.
void derive_scenario(ScenarioConfig& config);

std::shared_ptr<const AgentModel> build_model(const AgentConfig& agent, const BoxSet& workspace);
DisturbanceSignal disturbance_for(const ScenarioConfig& config, int agent_id);

}  // namespace tubempc
