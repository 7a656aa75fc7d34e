#pragma once

/**
 * @file
 * @brief Fleet topology and the sequential trajectory-exchange round.
 *
 * Agents solve in ascending label order once per sampling instant. After
 * solving, an agent posts its predicted nominal error trajectory to the
 * mailbox. A later agent constrains itself against the current-round posts
 * of smaller labels and against the previous-round posts of larger labels;
 * previous-round trajectories are read with clamped time lookup, which both
 * shifts them by one sampling period and holds their last state.
 */

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "tubempc/ocp.hpp"
#include "tubempc/tube.hpp"

namespace tubempc {

struct AgentSpec {
  int id = 0;
  double radius = 0.0;
  double sensing_range = 0.0;
  Vector x_init;
  Vector x_des;
  TubeParams tube;
  BoxSet input_set;    ///< admissible inputs
  BoxSet error_box;    ///< admissible errors x - x_des
  BoxSet tight_error;  ///< error_box shrunk by the tube
  BoxSet tight_input;  ///< input_set shrunk by k times the tube
  std::shared_ptr<const AgentModel> model;
  std::optional<OcpWeights> weights;
  TerminalIngredients terminal;
};

struct FleetTopology {
  std::map<int, std::set<int>> neighbors;
  double epsilon = 0.0;

  const std::set<int>& of(int id) const;
};

/// Strict distance test on initial states. Throws IsolatedAgentError for an
/// agent without neighbors and DomainError if some sensing range does not
/// exceed the largest pairwise radius sum.
FleetTopology build_neighbor_sets(const std::vector<AgentSpec>& specs, double epsilon);

struct ConfigFeasibility {
  bool feasible = true;
  std::vector<std::pair<int, int>> violations;  ///< (i, j) with ||x_des_i - x_des_j|| >= d_i
};

ConfigFeasibility check_feasible_configs(const std::vector<AgentSpec>& specs,
                                         const FleetTopology& topology);

struct MailboxEntry {
  int round = -1;
  Trajectory errors;  ///< predicted nominal error e_bar over [t_k, t_k + T]
};

class TrajectoryMailbox {
 public:
  enum class EventKind { write, read };
  struct Event {
    EventKind kind;
    int round;        ///< round in which the event happened
    int actor;        ///< agent performing the write or read
    int subject;      ///< agent whose entry was written or read
    int entry_round;  ///< stamp of the entry involved
  };

  /// Pre-round entry (stamp -1) used by larger labels before anyone has posted.
  void seed(int agent, Trajectory errors);
  /// Throws ProtocolOrderError if `agent` already posted in `round`.
  void write(int agent, int round, Trajectory errors);
  /// Returns the entry, recording the read; throws ProtocolOrderError if absent.
  const MailboxEntry& read(int reader, int subject, int round);
  bool has(int agent) const { return entries_.count(agent) > 0; }
  const std::vector<Event>& events() const { return events_; }

 private:
  std::map<int, MailboxEntry> entries_;
  std::vector<Event> events_;
};

/// What a larger label contributes in the first round, before it has posted a plan.
enum class FirstRoundPolicy {
  skip,  ///< no constraint; the larger label constrains itself against this agent's plan
  hold,  ///< constrain against the larger label's initial state held over the horizon
};

/// Coupled constraints for `agent` in `round`: one per neighbor, expressed in
/// absolute coordinates, with clearance d_i - epsilon - z_i - z_j. Smaller
/// labels must have posted in this round and larger labels in the previous one.
std::vector<CoupledConstraint> coupled_constraints_for(
    int agent, int round, TrajectoryMailbox& mailbox, const FleetTopology& topology,
    const std::map<int, const AgentSpec*>& specs,
    FirstRoundPolicy first_round = FirstRoundPolicy::skip);

struct FleetSettings {
  double delta = 0.1;
  double horizon = 2.0;
  std::size_t substeps = 10;
  SolverOptions solver;
  FirstRoundPolicy first_round = FirstRoundPolicy::skip;
};

struct AgentRoundResult {
  OcpSolution solution;
  OcpProblem problem;
  std::optional<AdmissibilityReport> candidate;  ///< shifted previous solution, if any
  bool warm_started = false;
  double wall_seconds = 0.0;
};

class Coordinator {
 public:
  Coordinator(std::vector<AgentSpec> specs, FleetTopology topology, FleetSettings settings);

  /// One ascending-priority pass. `nominal_errors` holds e_bar_i(t_k) per agent.
  /// Throws RoundInfeasible naming the first agent whose solve is infeasible.
  std::map<int, AgentRoundResult> run_round(double t_k, const std::map<int, Vector>& nominal_errors);

  const std::vector<AgentSpec>& specs() const { return specs_; }
  const FleetTopology& topology() const { return topology_; }
  const TrajectoryMailbox& mailbox() const { return mailbox_; }
  int rounds_completed() const { return round_; }
  std::size_t n_intervals() const;

 private:
  OcpProblem make_problem(const AgentSpec& spec, double t_k, const Vector& e_bar) const;

  std::vector<AgentSpec> specs_;
  std::map<int, const AgentSpec*> by_id_;
  FleetTopology topology_;
  FleetSettings settings_;
  TrajectoryMailbox mailbox_;
  std::map<int, AgentRoundResult> previous_;
  int round_ = 0;
};

}  // namespace tubempc
