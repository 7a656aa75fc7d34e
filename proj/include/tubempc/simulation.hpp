#pragma once

/**
 * @file
 * @brief Sampled-data closed loop, logging and metrics.
 *
 * Each sampling period the coordinator produces nominal inputs u_bar. The
 * real error e and the nominal error e_bar are then integrated together on
 * a fine grid under u = u_bar - k (e - e_bar) and the disturbance w(t). The
 * nominal error is carried over between samples; it is never reset to the
 * measured error after the first instant.
 */

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tubempc/config.hpp"

namespace tubempc {

struct AgentSample {
  Vector x, x_bar, e, e_bar, u, u_bar;
  double z_norm = 0.0;
  double stage_cost = 0.0;
};

struct LogRow {
  double t = 0.0;
  std::vector<AgentSample> agents;  ///< in ascending id order
  std::vector<double> distances;    ///< aligned with SimulationLog::pairs
};

struct RoundRecord {
  int round = 0;
  double t = 0.0;
  int agent = 0;
  SolveStatus status = SolveStatus::infeasible;
  int inner_iterations = 0;
  int outer_iterations = 0;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  double cost = 0.0;
  bool warm_started = false;
  bool has_candidate = false;
  bool candidate_admissible = false;
  double candidate_terminal_margin = 0.0;
  double candidate_state_margin = 0.0;
  double candidate_input_margin = 0.0;
  double wall_seconds = 0.0;
};

struct SimulationLog {
  std::vector<int> agent_ids;
  std::size_t state_dim = 0;
  std::vector<std::pair<int, int>> pairs;  ///< neighbor pairs (i < j), sorted
  std::vector<LogRow> rows;
  std::vector<RoundRecord> rounds;
  std::vector<std::vector<Vector>> first_controls;  ///< [round][agent] nominal input applied
};

struct AgentMetrics {
  int id = 0;
  double max_z_norm = 0.0;
  double z_tilde = 0.0;
  double containment_margin = 0.0;  ///< 1.02 z_tilde - max_z_norm
  double final_error_norm = 0.0;
  double final_error_bound = 0.0;   ///< z_tilde + sqrt(eta / lambda_min(P)) + slack
  std::vector<double> max_abs_input;  ///< per component
  std::vector<double> input_bound;    ///< per component, max(|lower|, |upper|)
  double input_margin = 0.0;          ///< min over samples of the input-set margin
  double workspace_margin = 0.0;      ///< min over samples of the workspace margin
  int feasible_rounds = 0;
  int candidate_checks = 0;
  int candidate_failures = 0;
};

struct PairMetrics {
  int i = 0;
  int j = 0;
  double max_distance = 0.0;
  double min_clearance = 0.0;  ///< d_i - max distance
};

struct IssAgentReport {
  int id = 0;
  bool bounded_ok = false;  ///< ||e(t)|| <= ||e(0)|| + z_tilde + slack after the transient
  bool tail_ok = false;     ///< tail sup <= z_tilde + sqrt(eta / lambda_min(P)) + slack
  double worst_bounded_excess = 0.0;  ///< max of ||e(t)|| - envelope (negative when inside)
  double tail_sup = 0.0;
  double tail_cap = 0.0;
};

struct IssReport {
  std::vector<IssAgentReport> agents;
  bool passed() const;
};

struct MetricsReport {
  std::string scenario;
  std::uint64_t seed = 0;
  int rounds = 0;
  bool all_rounds_feasible = false;
  std::vector<AgentMetrics> agents;
  std::vector<PairMetrics> pairs;
  IssReport iss;

  bool tube_ok() const;
  bool connectivity_ok() const;
  bool inputs_ok() const;
  bool workspace_ok() const;
  bool convergence_ok() const;
  bool candidates_ok() const;
  bool passed() const;
};

struct SimulationResult {
  SimulationLog log;
  MetricsReport metrics;
};

/// Throws RoundInfeasible or IntegrationDiverged with the time and agent.
SimulationResult run_closed_loop(const ScenarioConfig& config);

IssReport iss_envelope_check(const SimulationLog& log, const ScenarioConfig& config);

MetricsReport compute_metrics(const SimulationLog& log, const ScenarioConfig& config);

/// Fine-grid log; floating point with 17 significant digits.
void emit_csv(const SimulationLog& log, const std::string& path);
/// Per-round solver records (includes wall time, so not reproducible).
void emit_rounds_csv(const SimulationLog& log, const std::string& path);
/// Writes `<stem>.txt` (key=value) and `<stem>.json`.
void emit_metrics(const MetricsReport& report, const std::string& stem);

std::string csv_header(const SimulationLog& log);
std::vector<std::pair<std::string, double>> flatten_metrics(const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);

}  // namespace tubempc
