#pragma once

#include <stdexcept>
#include <string>

namespace tubempc {

/// Invalid argument to a closed-form synthesis routine (non-positive gain, radius, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Scenario file could not be parsed or failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A fixed-step integration produced a non-finite state.
class IntegrationDiverged : public std::runtime_error {
 public:
  IntegrationDiverged(double t, const std::string& what)
      : std::runtime_error(what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// A model does not satisfy one of the standing structural assumptions.
class AssumptionViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The algebraic Riccati equation has no stabilizing solution.
class StabilizabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Terminal level bisection collapsed below its floor.
class TerminalSetDegenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Objective became non-finite during optimization.
class SolverDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Neighbor-set construction left an agent without neighbors.
class IsolatedAgentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mailbox read violated the priority ordering of a coordination round.
class ProtocolOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An agent's optimal control problem was infeasible during a round.
class RoundInfeasible : public std::runtime_error {
 public:
  RoundInfeasible(int agent, double t, const std::string& what)
      : std::runtime_error(what), agent_(agent), time_(t) {}
  int agent() const { return agent_; }
  double time() const { return time_; }

 private:
  int agent_;
  double time_;
};

}  // namespace tubempc
