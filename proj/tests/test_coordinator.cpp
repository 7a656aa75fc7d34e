#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "tubempc/config.hpp"
#include "tubempc/coordinator.hpp"
#include "tubempc/errors.hpp"

using namespace tubempc;
using Eigen::Vector2d;
using Kind = TrajectoryMailbox::EventKind;

namespace {

AgentSpec point(int id, Vector2d x_init, Vector2d x_des, double range = 5.0, double radius = 1.0) {
  AgentSpec s;
  s.id = id;
  s.radius = radius;
  s.sensing_range = range;
  s.x_init = x_init;
  s.x_des = x_des;
  return s;
}

ScenarioConfig riccati_scenario(const ConfigOverrides& o = {}) {
  return load_config(std::string(TUBEMPC_CONFIG_DIR) + "/benchmark_riccati.yaml", o);
}

std::map<int, Vector> initial_errors(const std::vector<AgentSpec>& specs) {
  std::map<int, Vector> e;
  for (const AgentSpec& s : specs) e[s.id] = s.x_init - s.x_des;
  return e;
}

Trajectory constant(Vector2d e) {
  Trajectory t;
  t.times = {0.0};
  t.states = {e};
  return t;
}

}  // namespace

TEST(NeighborSets, BenchmarkPath) {
  const std::vector<AgentSpec> specs = {point(1, {-3.0, 2.9}, {0.1206, 1.1155}),
                                        point(2, {-2.5, -0.2}, {2.0, 0.0}),
                                        point(3, {-2.9, -4.0}, {0.9, -2.8})};
  const FleetTopology t = build_neighbor_sets(specs, 0.01);
  EXPECT_EQ(t.of(1), (std::set<int>{2}));
  EXPECT_EQ(t.of(2), (std::set<int>{1, 3}));
  EXPECT_EQ(t.of(3), (std::set<int>{2}));
  EXPECT_THROW(t.of(4), DomainError);
}

TEST(NeighborSets, BoundaryIsExcluded) {
  // Exactly 5 apart: not neighbors under the strict test.
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {3, 4}, {0, 0}),
                                        point(3, {3, 0}, {0, 0})};
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  EXPECT_EQ(t.of(1), (std::set<int>{3}));
  EXPECT_EQ(t.of(2), (std::set<int>{3}));
  EXPECT_EQ(t.of(3), (std::set<int>{1, 2}));
}

TEST(NeighborSets, CollinearCloseAgentsFormCompleteGraph) {
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {1, 0}, {0, 0}),
                                        point(3, {2, 0}, {0, 0}), point(4, {3, 0}, {0, 0})};
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  for (int i = 1; i <= 4; ++i) EXPECT_EQ(t.of(i).size(), 3u);
}

TEST(NeighborSets, AsymmetricRangesGiveDirectedSets) {
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}, 5.0), point(2, {4, 0}, {0, 0}, 3.5),
                                        point(3, {1, 0}, {0, 0}, 5.0)};
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  EXPECT_EQ(t.of(1), (std::set<int>{2, 3}));
  EXPECT_EQ(t.of(2), (std::set<int>{3}));
}

TEST(NeighborSets, IsolatedAgentIsAnError) {
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {1, 0}, {0, 0}),
                                        point(3, {10, 10}, {0, 0})};
  try {
    build_neighbor_sets(specs, 0.0);
    FAIL() << "expected IsolatedAgentError";
  } catch (const IsolatedAgentError& e) {
    EXPECT_NE(std::string(e.what()).find("agent 3"), std::string::npos) << e.what();
  }
}

TEST(NeighborSets, RangeMustExceedRadiusSum) {
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}, 2.0), point(2, {1, 0}, {0, 0}, 2.0)};
  EXPECT_THROW(build_neighbor_sets(specs, 0.0), DomainError);
  EXPECT_THROW(build_neighbor_sets({}, 0.0), DomainError);
}

TEST(NeighborSets, SingleAgentHasNoNeighbors) {
  const FleetTopology t = build_neighbor_sets({point(1, {0, 0}, {1, 1})}, 0.0);
  EXPECT_TRUE(t.of(1).empty());
}

TEST(FeasibleConfigs, BenchmarkTargetsAreMutuallyInRange) {
  const ScenarioConfig c = riccati_scenario();
  const FleetTopology t = build_neighbor_sets(c.specs, c.epsilon);
  const ConfigFeasibility f = check_feasible_configs(c.specs, t);
  EXPECT_TRUE(f.feasible);
  EXPECT_TRUE(f.violations.empty());
}

TEST(FeasibleConfigs, TargetsAtRangeAreInfeasible) {
  const std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {1, 0}, {5, 0})};
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  const ConfigFeasibility f = check_feasible_configs(specs, t);
  EXPECT_FALSE(f.feasible);
  const std::vector<std::pair<int, int>> expected = {{1, 2}, {2, 1}};
  EXPECT_EQ(f.violations, expected);
}

TEST(CoupledConstraints, ClearanceSubtractsMarginAndBothTubes) {
  const ScenarioConfig c = riccati_scenario();
  const FleetTopology t = build_neighbor_sets(c.specs, c.epsilon);
  std::map<int, const AgentSpec*> by_id;
  for (const AgentSpec& s : c.specs) by_id[s.id] = &s;
  TrajectoryMailbox mb;
  for (const AgentSpec& s : c.specs) mb.seed(s.id, constant(s.x_init - s.x_des));
  mb.write(1, 0, constant(Vector2d(0, 0)));
  const auto cs = coupled_constraints_for(2, 0, mb, t, by_id, FirstRoundPolicy::skip);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].neighbor, 1);
  EXPECT_NEAR(cs[0].clearance, 4.39, 1e-12);
  // Posted errors are turned into absolute positions.
  EXPECT_EQ(cs[0].neighbor_states.states[0], c.spec(1).x_des);
}

TEST(CoupledConstraints, NoTubeNoMarginGivesSensingRange) {
  std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {1, 0}, {1, 0})};
  for (AgentSpec& s : specs) s.tube.z_tilde = 0.0;
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  std::map<int, const AgentSpec*> by_id = {{1, &specs[0]}, {2, &specs[1]}};
  TrajectoryMailbox mb;
  mb.seed(1, constant(Vector2d(0, 0)));
  mb.seed(2, constant(Vector2d(0, 0)));
  const auto cs = coupled_constraints_for(1, 0, mb, t, by_id, FirstRoundPolicy::hold);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].clearance, 5.0);
  EXPECT_EQ(cs[0].neighbor_states.states[0], Vector2d(1, 0));
}

TEST(CoupledConstraints, StaleOrMissingEntriesAreProtocolErrors) {
  std::vector<AgentSpec> specs = {point(1, {0, 0}, {0, 0}), point(2, {1, 0}, {1, 0})};
  const FleetTopology t = build_neighbor_sets(specs, 0.0);
  std::map<int, const AgentSpec*> by_id = {{1, &specs[0]}, {2, &specs[1]}};
  TrajectoryMailbox mb;
  // Agent 2 reads agent 1 before agent 1 posted anything.
  EXPECT_THROW(coupled_constraints_for(2, 0, mb, t, by_id), ProtocolOrderError);
  mb.seed(1, constant(Vector2d(0, 0)));
  // Seed is stamped -1, but a smaller label must have posted in this round.
  EXPECT_THROW(coupled_constraints_for(2, 0, mb, t, by_id), ProtocolOrderError);
  mb.write(1, 0, constant(Vector2d(0, 0)));
  EXPECT_NO_THROW(coupled_constraints_for(2, 0, mb, t, by_id));
  // In round 1 agent 1 needs agent 2's round-0 post.
  mb.seed(2, constant(Vector2d(0, 0)));
  EXPECT_THROW(coupled_constraints_for(1, 1, mb, t, by_id), ProtocolOrderError);
}

TEST(Mailbox, DuplicateWriteInRoundThrows) {
  TrajectoryMailbox mb;
  mb.write(1, 0, constant(Vector2d(0, 0)));
  EXPECT_THROW(mb.write(1, 0, constant(Vector2d(1, 0))), ProtocolOrderError);
  EXPECT_NO_THROW(mb.write(1, 1, constant(Vector2d(1, 0))));
  EXPECT_THROW(mb.write(1, 0, constant(Vector2d(1, 0))), ProtocolOrderError);
  EXPECT_EQ(mb.events().size(), 2u);
}

// Over two rounds each agent reads only what the priority order allows:
// current-round posts from smaller labels, previous-round posts from larger ones.
TEST(Coordinator, ProtocolOrderOverTwoRounds) {
  const ScenarioConfig c = riccati_scenario();
  Coordinator coord(c.specs, build_neighbor_sets(c.specs, c.epsilon), c.fleet_settings());
  std::map<int, Vector> e = initial_errors(c.specs);
  const auto r0 = coord.run_round(0.0, e);
  for (auto& [id, r] : r0) e[id] = r.solution.predicted.state_at(c.delta);
  const auto r1 = coord.run_round(c.delta, e);
  EXPECT_EQ(coord.rounds_completed(), 2);

  std::vector<int> writes;
  for (const auto& ev : coord.mailbox().events()) {
    if (ev.kind == Kind::write) {
      writes.push_back(ev.actor);
      EXPECT_EQ(ev.entry_round, ev.round);
      continue;
    }
    const int expected = ev.subject < ev.actor ? ev.round : ev.round - 1;
    EXPECT_EQ(ev.entry_round, expected) << "agent " << ev.actor << " read " << ev.subject
                                        << " in round " << ev.round;
  }
  EXPECT_EQ(writes, (std::vector<int>{1, 2, 3, 1, 2, 3}));

  // Round 0 under the skip policy: 2 reads 1, 3 reads 2. Round 1 adds the
  // reads of larger labels.
  std::vector<std::pair<int, int>> reads0, reads1;
  for (const auto& ev : coord.mailbox().events()) {
    if (ev.kind != Kind::read) continue;
    (ev.round == 0 ? reads0 : reads1).emplace_back(ev.actor, ev.subject);
  }
  EXPECT_EQ(reads0, (std::vector<std::pair<int, int>>{{2, 1}, {3, 2}}));
  EXPECT_EQ(reads1, (std::vector<std::pair<int, int>>{{1, 2}, {2, 1}, {2, 3}, {3, 2}}));

  EXPECT_FALSE(r0.at(1).warm_started);
  EXPECT_TRUE(r1.at(1).candidate.has_value());
  for (const auto& [id, r] : r1) {
    EXPECT_TRUE(r.candidate->admissible()) << "agent " << id;
    EXPECT_EQ(r.problem.coupled.size(), c.spec(id).id == 2 ? 2u : 1u);
  }
}

// The candidate from the shifted plan starts exactly where the realized
// nominal state is, so the shift keeps the previous plan's tail bitwise.
TEST(Coordinator, ShiftedCandidateReproducesPlanTail) {
  const ScenarioConfig c = riccati_scenario();
  Coordinator coord(c.specs, build_neighbor_sets(c.specs, c.epsilon), c.fleet_settings());
  std::map<int, Vector> e = initial_errors(c.specs);
  const auto r0 = coord.run_round(0.0, e);
  for (auto& [id, r] : r0) e[id] = r.solution.predicted.states[c.substeps];
  const auto r1 = coord.run_round(c.delta, e);
  for (const auto& [id, r] : r1) {
    const auto shifted = shift_solution(r0.at(id).problem, r0.at(id).solution, c.delta);
    const CostEvaluation ev = evaluate_cost(r.problem, shifted);
    const Trajectory& prev = r0.at(id).solution.predicted;
    for (std::size_t i = 0; i + c.substeps < prev.size(); ++i) {
      ASSERT_EQ(ev.predicted.states[i], prev.states[i + c.substeps]) << "agent " << id << " i " << i;
    }
  }
}

TEST(Coordinator, SingleAgentRunsWithoutConstraints) {
  const ScenarioConfig c = riccati_scenario();
  std::vector<AgentSpec> one = {c.spec(1)};
  Coordinator coord(one, build_neighbor_sets(one, c.epsilon), c.fleet_settings());
  const auto r = coord.run_round(0.0, initial_errors(one));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_TRUE(r.at(1).problem.coupled.empty());
  EXPECT_NE(r.at(1).solution.status, SolveStatus::infeasible);
}

TEST(Coordinator, RejectsHorizonOffTheSamplingGrid) {
  const ScenarioConfig c = riccati_scenario();
  FleetSettings s = c.fleet_settings();
  s.horizon = 0.25;
  EXPECT_THROW(Coordinator(c.specs, build_neighbor_sets(c.specs, c.epsilon), s), DomainError);
}

// Holding agent 3 at its initial state puts it 6.33 from agent 2's target,
// beyond the 4.39 clearance, so agent 2 cannot reach its terminal set.
TEST(Coordinator, HoldPolicyMakesAgentTwoInfeasibleAtStart) {
  const ScenarioConfig c = riccati_scenario();
  EXPECT_NEAR((c.spec(3).x_init - c.spec(2).x_des).norm(), std::sqrt(40.01), 1e-12);
  FleetSettings s = c.fleet_settings();
  s.first_round = FirstRoundPolicy::hold;
  Coordinator coord(c.specs, build_neighbor_sets(c.specs, c.epsilon), s);
  try {
    coord.run_round(0.0, initial_errors(c.specs));
    FAIL() << "expected RoundInfeasible";
  } catch (const RoundInfeasible& e) {
    EXPECT_EQ(e.agent(), 2);
    EXPECT_EQ(e.time(), 0.0);
  }
}
