#include "tubempc/coordinator.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "tubempc/errors.hpp"

namespace tubempc {

const std::set<int>& FleetTopology::of(int id) const {
  const auto it = neighbors.find(id);
  if (it == neighbors.end()) throw DomainError("FleetTopology: unknown agent " + std::to_string(id));
  return it->second;
}

FleetTopology build_neighbor_sets(const std::vector<AgentSpec>& specs, double epsilon) {
  if (specs.empty()) throw DomainError("build_neighbor_sets: empty fleet");
  const Eigen::Index n = specs.front().x_init.size();
  double max_pair = 0.0;
  for (std::size_t a = 0; a < specs.size(); ++a) {
    if (specs[a].x_init.size() != n) {
      throw DomainError("build_neighbor_sets: initial states differ in dimension");
    }
    for (std::size_t b = a + 1; b < specs.size(); ++b) {
      if (specs[a].id == specs[b].id) throw DomainError("build_neighbor_sets: duplicate agent id");
      max_pair = std::max(max_pair, specs[a].radius + specs[b].radius);
    }
  }
  for (const AgentSpec& s : specs) {
    if (specs.size() > 1 && !(s.sensing_range > max_pair)) {
      std::ostringstream msg;
      msg << "agent " << s.id << ": sensing range " << s.sensing_range
          << " must exceed the largest radius sum " << max_pair;
      throw DomainError(msg.str());
    }
  }

  FleetTopology topo;
  topo.epsilon = epsilon;
  for (const AgentSpec& s : specs) {
    std::set<int>& set = topo.neighbors[s.id];
    for (const AgentSpec& o : specs) {
      if (o.id != s.id && (s.x_init - o.x_init).norm() < s.sensing_range) set.insert(o.id);
    }
  }
  if (specs.size() > 1) {
    for (const auto& [id, set] : topo.neighbors) {
      if (set.empty()) {
        throw IsolatedAgentError("agent " + std::to_string(id) + " has no neighbor at t = 0");
      }
    }
  }
  return topo;
}

ConfigFeasibility check_feasible_configs(const std::vector<AgentSpec>& specs,
                                         const FleetTopology& topology) {
  ConfigFeasibility report;
  std::map<int, const AgentSpec*> by_id;
  for (const AgentSpec& s : specs) by_id[s.id] = &s;
  for (const auto& [i, set] : topology.neighbors) {
    const AgentSpec& a = *by_id.at(i);
    for (int j : set) {
      if (!((a.x_des - by_id.at(j)->x_des).norm() < a.sensing_range)) {
        report.feasible = false;
        report.violations.emplace_back(i, j);
      }
    }
  }
  return report;
}

void TrajectoryMailbox::seed(int agent, Trajectory errors) {
  entries_[agent] = MailboxEntry{-1, std::move(errors)};
}

void TrajectoryMailbox::write(int agent, int round, Trajectory errors) {
  const auto it = entries_.find(agent);
  if (it != entries_.end() && it->second.round >= round) {
    throw ProtocolOrderError("mailbox: agent " + std::to_string(agent) + " already posted in round " +
                             std::to_string(round));
  }
  entries_[agent] = MailboxEntry{round, std::move(errors)};
  events_.push_back({EventKind::write, round, agent, agent, round});
}

const MailboxEntry& TrajectoryMailbox::read(int reader, int subject, int round) {
  const auto it = entries_.find(subject);
  if (it == entries_.end()) {
    throw ProtocolOrderError("mailbox: agent " + std::to_string(reader) + " read agent " +
                             std::to_string(subject) + " before it posted anything");
  }
  events_.push_back({EventKind::read, round, reader, subject, it->second.round});
  return it->second;
}

std::vector<CoupledConstraint> coupled_constraints_for(
    int agent, int round, TrajectoryMailbox& mailbox, const FleetTopology& topology,
    const std::map<int, const AgentSpec*>& specs, FirstRoundPolicy first_round) {
  const AgentSpec& self = *specs.at(agent);
  std::vector<CoupledConstraint> out;
  for (int j : topology.of(agent)) {
    if (j > agent && round == 0 && first_round == FirstRoundPolicy::skip) continue;
    const MailboxEntry& entry = mailbox.read(agent, j, round);
    const int expected = j < agent ? round : round - 1;
    if (entry.round != expected) {
      std::ostringstream msg;
      msg << "agent " << agent << " in round " << round << " found agent " << j
          << "'s entry stamped " << entry.round << ", expected " << expected;
      throw ProtocolOrderError(msg.str());
    }
    const AgentSpec& other = *specs.at(j);
    CoupledConstraint c;
    c.neighbor = j;
    c.neighbor_states.times = entry.errors.times;
    c.neighbor_states.states.reserve(entry.errors.states.size());
    for (const Vector& e : entry.errors.states) c.neighbor_states.states.push_back(e + other.x_des);
    c.clearance = self.sensing_range - topology.epsilon - self.tube.z_tilde - other.tube.z_tilde;
    out.push_back(std::move(c));
  }
  return out;
}

Coordinator::Coordinator(std::vector<AgentSpec> specs, FleetTopology topology,
                         FleetSettings settings)
    : specs_(std::move(specs)), topology_(std::move(topology)), settings_(std::move(settings)) {
  std::sort(specs_.begin(), specs_.end(),
            [](const AgentSpec& a, const AgentSpec& b) { return a.id < b.id; });
  for (const AgentSpec& s : specs_) {
    if (!s.model || !s.weights) throw DomainError("Coordinator: agent spec incomplete");
    by_id_[s.id] = &s;
    Trajectory hold;
    hold.times.push_back(0.0);
    hold.states.push_back(s.x_init - s.x_des);
    mailbox_.seed(s.id, std::move(hold));
  }
  (void)n_intervals();
}

std::size_t Coordinator::n_intervals() const {
  const double ratio = settings_.horizon / settings_.delta;
  const auto n = static_cast<std::size_t>(std::llround(ratio));
  if (n == 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9) {
    throw DomainError("Coordinator: horizon must be a positive multiple of the sampling time");
  }
  return n;
}

OcpProblem Coordinator::make_problem(const AgentSpec& spec, double t_k, const Vector& e_bar) const {
  OcpProblem p;
  p.model = spec.model;
  p.x_des = spec.x_des;
  p.t0 = t_k;
  p.horizon = settings_.horizon;
  p.n_intervals = n_intervals();
  p.substeps = settings_.substeps;
  p.weights = *spec.weights;
  p.state_box = spec.tight_error;
  p.input_box = spec.tight_input;
  p.terminal = spec.terminal;
  p.initial_error = e_bar;
  return p;
}

std::map<int, AgentRoundResult> Coordinator::run_round(double t_k,
                                                       const std::map<int, Vector>& nominal_errors) {
  std::map<int, AgentRoundResult> results;
  for (const AgentSpec& spec : specs_) {
    const auto t_start = std::chrono::steady_clock::now();
    AgentRoundResult r;
    r.problem = make_problem(spec, t_k, nominal_errors.at(spec.id));
    r.problem.coupled = coupled_constraints_for(spec.id, round_, mailbox_, topology_, by_id_,
                                                 settings_.first_round);

    std::optional<std::vector<Vector>> warm;
    const auto prev = previous_.find(spec.id);
    if (prev != previous_.end()) {
      warm = shift_solution(prev->second.problem, prev->second.solution, settings_.delta);
      r.candidate = check_admissibility(r.problem, *warm);
    }
    try {
      r.solution = solve_dfhocp(r.problem, warm, settings_.solver);
      r.warm_started = warm.has_value();
    } catch (const SolverDiverged&) {
      if (!warm) throw;
      spdlog::debug("agent {}: shifted warm start diverged, solving cold", spec.id);
      r.solution = solve_dfhocp(r.problem, std::nullopt, settings_.solver);
    }
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    spdlog::debug("t = {:.3f} agent {}: {} cost {:.6g} kkt {:.2e} viol {:.2e} iters {}", t_k,
                  spec.id, to_string(r.solution.status), r.solution.cost, r.solution.kkt_residual,
                  r.solution.max_violation, r.solution.inner_iterations);
    if (r.solution.status == SolveStatus::infeasible) {
      std::ostringstream msg;
      msg << "agent " << spec.id << " infeasible at t = " << t_k << " (constraint violation "
          << r.solution.max_violation << ")";
      throw RoundInfeasible(spec.id, t_k, msg.str());
    }
    mailbox_.write(spec.id, round_, r.solution.predicted);
    results.emplace(spec.id, std::move(r));
  }
  for (const auto& [id, r] : results) previous_[id] = r;
  ++round_;
  return results;
}

}  // namespace tubempc
