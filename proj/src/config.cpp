#include "tubempc/config.hpp"

#include <yaml-cpp/yaml.h>

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tubempc/errors.hpp"
#include "tubempc/tube.hpp"

namespace tubempc {

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ConfigError(field + ": " + what);
}

bool present(const YAML::Node& n) { return n.IsDefined() && !n.IsNull(); }

// Looks a key up in the agent block first, then in the shared defaults.
class Scope {
 public:
  Scope(YAML::Node node, YAML::Node defaults, std::string path)
      : node_(std::move(node)), defaults_(std::move(defaults)), path_(std::move(path)) {}

  YAML::Node find(const std::string& key) const {
    if (present(node_) && node_.IsMap() && present(node_[key])) return node_[key];
    if (present(defaults_) && defaults_.IsMap() && present(defaults_[key])) return defaults_[key];
    return YAML::Node();
  }
  bool has(const std::string& key) const { return present(find(key)); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key) const {
    const YAML::Node n = find(key);
    if (!present(n)) fail(field(key), "missing");
    return as_number(n, field(key));
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    const YAML::Node n = find(key);
    if (!present(n)) return fallback;
    if (!n.IsScalar()) fail(field(key), "expected a string");
    return n.as<std::string>();
  }

  static double as_number(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) fail(field, "expected a number");
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(field, "expected a number, got '" + n.as<std::string>() + "'");
    }
  }

 private:
  YAML::Node node_;
  YAML::Node defaults_;
  std::string path_;
};

Vector parse_vector(const YAML::Node& n, const std::string& field, std::size_t dim) {
  if (!present(n) || !n.IsSequence()) fail(field, "expected a list of numbers");
  if (n.size() != dim) {
    fail(field, "expected " + std::to_string(dim) + " entries, got " + std::to_string(n.size()));
  }
  Vector v(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    v[static_cast<Eigen::Index>(i)] = Scope::as_number(n[i], field + "[" + std::to_string(i) + "]");
  }
  return v;
}

// Scalar s -> s I, flat list -> diagonal, nested list -> full matrix.
Matrix parse_matrix(const YAML::Node& n, const std::string& field, std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  if (!present(n)) fail(field, "missing");
  if (n.IsScalar()) return Scope::as_number(n, field) * Matrix::Identity(d, d);
  if (!n.IsSequence() || n.size() != dim) {
    fail(field, "expected a scalar, a diagonal of " + std::to_string(dim) + " entries or a " +
                    std::to_string(dim) + "x" + std::to_string(dim) + " nested list");
  }
  if (n[0].IsScalar()) return parse_vector(n, field, dim).asDiagonal();
  Matrix M(d, d);
  for (std::size_t i = 0; i < dim; ++i) {
    M.row(static_cast<Eigen::Index>(i)) =
        parse_vector(n[i], field + "[" + std::to_string(i) + "]", dim).transpose();
  }
  return M;
}

BoxSet parse_box(const YAML::Node& n, const std::string& field, std::size_t dim) {
  if (!present(n) || !n.IsMap()) fail(field, "expected a map with lower/upper or half_width");
  try {
    if (present(n["half_width"])) {
      const double hw = Scope::as_number(n["half_width"], field + ".half_width");
      return BoxSet::symmetric(dim, hw);
    }
    return BoxSet(parse_vector(n["lower"], field + ".lower", dim),
                  parse_vector(n["upper"], field + ".upper", dim));
  } catch (const DomainError& e) {
    fail(field, e.what());
  }
}

std::size_t positive_count(const Scope& s, const std::string& key, std::size_t fallback) {
  const double v = s.number(key, static_cast<double>(fallback));
  if (!(v >= 1.0) || v != std::floor(v)) fail(s.field(key), "expected a positive integer");
  return static_cast<std::size_t>(v);
}

void check_multiple(double value, double delta, const std::string& field) {
  const double ratio = value / delta;
  if (!(value > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
    fail(field, "must be a positive integer multiple of delta");
  }
}

AgentConfig parse_agent(const YAML::Node& node, const YAML::Node& defaults, std::size_t index,
                        std::size_t dim) {
  const Scope s(node, defaults, "agents[" + std::to_string(index) + "]");
  AgentConfig a;
  const double id = s.number("id");
  if (!(id >= 1.0) || id != std::floor(id)) fail(s.field("id"), "expected a positive integer");
  a.id = static_cast<int>(id);
  a.dynamics = s.text("dynamics", "benchmark");
  if (a.dynamics != "benchmark" && a.dynamics != "integrator" && a.dynamics != "linear") {
    fail(s.field("dynamics"), "unknown model '" + a.dynamics + "'");
  }
  if (a.dynamics == "benchmark" && dim != 2) fail(s.field("dynamics"), "benchmark model is planar");
  if (a.dynamics == "linear") {
    a.A = parse_matrix(s.find("A"), s.field("A"), dim);
    a.B = parse_matrix(s.find("B"), s.field("B"), dim);
  }
  a.lipschitz = s.number("lipschitz");
  a.jac_lower = s.number("jac_lower");
  a.w_tilde = s.number("w_tilde");
  if (!(a.w_tilde >= 0.0)) fail(s.field("w_tilde"), "must be non-negative");
  a.radius = s.number("radius");
  a.sensing_range = s.number("sensing_range");
  if (!(a.radius > 0.0)) fail(s.field("radius"), "must be positive");
  if (!(a.sensing_range > 0.0)) fail(s.field("sensing_range"), "must be positive");
  a.x_init = parse_vector(s.find("x_init"), s.field("x_init"), dim);
  a.x_des = parse_vector(s.find("x_des"), s.field("x_des"), dim);
  a.input_set = parse_box(s.find("input_set"), s.field("input_set"), dim);
  if (s.has("error_box")) a.error_box = parse_box(s.find("error_box"), s.field("error_box"), dim);
  a.rho = s.number("rho", 1.0);
  a.k_lower = s.number("k_lower", 1.0);
  a.Q = parse_matrix(s.find("Q"), s.field("Q"), dim);
  a.R = parse_matrix(s.find("R"), s.field("R"), dim);
  const YAML::Node P = s.find("P");
  if (present(P) && !(P.IsScalar() && P.as<std::string>() == "riccati")) {
    a.P = parse_matrix(P, s.field("P"), dim);
  }
  const YAML::Node eta = s.find("eta");
  if (present(eta) && !(eta.IsScalar() && eta.as<std::string>() == "auto")) {
    a.eta = s.number("eta");
    if (!(*a.eta > 0.0)) fail(s.field("eta"), "must be positive");
  }
  return a;
}

}  // namespace

std::size_t ScenarioConfig::rounds() const {
  return static_cast<std::size_t>(std::llround(total_time / delta));
}

const AgentSpec& ScenarioConfig::spec(int id) const {
  for (const AgentSpec& s : specs) {
    if (s.id == id) return s;
  }
  throw DomainError("ScenarioConfig: unknown agent " + std::to_string(id));
}

FleetSettings ScenarioConfig::fleet_settings() const {
  FleetSettings f;
  f.delta = delta;
  f.horizon = horizon;
  f.substeps = substeps;
  f.solver = solver;
  f.first_round = first_round;
  return f;
}

ScenarioConfig parse_config(const std::string& text, const ConfigOverrides& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("parse error: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("top level: expected a map");
  const Scope top(root, YAML::Node(), "");

  ScenarioConfig c;
  c.name = top.text("name", "scenario");
  const double seed = top.number("seed", 1.0);
  if (!(seed >= 0.0) || seed != std::floor(seed)) fail("seed", "expected a non-negative integer");
  c.seed = static_cast<std::uint64_t>(seed);
  c.state_dim = positive_count(top, "state_dim", 2);
  c.workspace = parse_box(top.find("workspace"), "workspace", c.state_dim);
  c.epsilon = top.number("epsilon", 0.01);
  if (!(c.epsilon >= 0.0)) fail("epsilon", "must be non-negative");
  c.delta = top.number("delta", 0.1);
  if (!(c.delta > 0.0)) fail("delta", "must be positive");
  c.horizon = top.number("horizon", 2.0);
  c.total_time = top.number("total_time", 10.0);
  c.substeps = positive_count(top, "integrator_substeps", 10);
  const std::string first = top.text("first_round", "skip");
  if (first == "skip") {
    c.first_round = FirstRoundPolicy::skip;
  } else if (first == "hold") {
    c.first_round = FirstRoundPolicy::hold;
  } else {
    fail("first_round", "expected skip or hold");
  }

  if (const YAML::Node n = root["solver"]) {
    const Scope s(n, YAML::Node(), "solver");
    c.solver.al.kkt_tol = s.number("kkt_tol", c.solver.al.kkt_tol);
    c.solver.al.constraint_tol = s.number("constraint_tol", c.solver.al.constraint_tol);
    c.solver.al.max_inner = static_cast<int>(positive_count(s, "max_inner", 200));
    c.solver.al.max_outer = static_cast<int>(positive_count(s, "max_outer", 8));
    c.solver.al.penalty_init = s.number("penalty_init", c.solver.al.penalty_init);
    c.solver.al.penalty_growth = s.number("penalty_growth", c.solver.al.penalty_growth);
    c.solver.al.fd_step = s.number("fd_step", c.solver.al.fd_step);
    c.solver.infeasible_tol = s.number("infeasible_tol", c.solver.infeasible_tol);
    const std::string g = s.text("gradient", "analytic");
    if (g == "analytic") {
      c.solver.al.gradient = GradientMode::analytic;
    } else if (g == "central_difference") {
      c.solver.al.gradient = GradientMode::central_difference;
    } else {
      fail("solver.gradient", "expected analytic or central_difference");
    }
  }
  if (const YAML::Node n = root["terminal"]) {
    const Scope s(n, YAML::Node(), "terminal");
    c.terminal.boundary_samples = positive_count(s, "boundary_samples", 1000);
    c.terminal.riccati_margin = s.number("riccati_margin", c.terminal.riccati_margin);
    c.terminal.eta_start = s.number("eta_start", c.terminal.eta_start);
  }
  if (const YAML::Node n = root["disturbance"]) {
    const Scope s(n, YAML::Node(), "disturbance");
    const std::string kind = s.text("type", "benchmark");
    if (kind == "benchmark") {
      c.disturbance.kind = DisturbanceKind::benchmark;
      if (c.state_dim != 2) fail("disturbance.type", "benchmark signal is planar");
    } else if (kind == "random") {
      c.disturbance.kind = DisturbanceKind::random;
      c.disturbance.bound = s.number("bound");
      c.disturbance.hold = s.number("hold", 0.1);
      if (!(c.disturbance.bound >= 0.0)) fail("disturbance.bound", "must be non-negative");
      if (!(c.disturbance.hold > 0.0)) fail("disturbance.hold", "must be positive");
    } else if (kind == "zero") {
      c.disturbance.kind = DisturbanceKind::zero;
    } else {
      fail("disturbance.type", "expected benchmark, random or zero");
    }
  }
  if (const YAML::Node n = root["iss"]) {
    const Scope s(n, YAML::Node(), "iss");
    c.iss.slack = s.number("slack", c.iss.slack);
    c.iss.transient = s.number("transient", c.iss.transient);
    c.iss.tail_fraction = s.number("tail_fraction", c.iss.tail_fraction);
    if (!(c.iss.tail_fraction > 0.0 && c.iss.tail_fraction <= 1.0)) {
      fail("iss.tail_fraction", "must lie in (0, 1]");
    }
  }

  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.horizon) c.horizon = *overrides.horizon;
  if (overrides.total_time) c.total_time = *overrides.total_time;
  if (overrides.substeps) c.substeps = *overrides.substeps;
  if (c.substeps == 0) fail("integrator_substeps", "must be positive");
  check_multiple(c.total_time, c.delta, "total_time");
  check_multiple(c.horizon, c.delta, "horizon");

  const YAML::Node agents = root["agents"];
  if (!agents || !agents.IsSequence() || agents.size() == 0) {
    fail("agents", "expected a non-empty list of agent blocks");
  }
  std::set<int> ids;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    AgentConfig a = parse_agent(agents[i], root["defaults"], i, c.state_dim);
    if (!ids.insert(a.id).second) {
      fail("agents[" + std::to_string(i) + "].id", "duplicate id " + std::to_string(a.id));
    }
    c.agents.push_back(std::move(a));
  }
  derive_scenario(c);
  return c;
}

ScenarioConfig load_config(const std::string& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  ScenarioConfig c = parse_config(buf.str(), overrides);
  spdlog::info("loaded scenario '{}' from {} ({} agents)", c.name, path, c.agents.size());
  return c;
}

std::shared_ptr<const AgentModel> build_model(const AgentConfig& a, const BoxSet& workspace) {
  const std::size_t n = workspace.dim();
  try {
    if (a.dynamics == "benchmark") {
      return std::make_shared<const AgentModel>(
          benchmark_model().with_constants(a.lipschitz, a.jac_lower, a.input_set, workspace));
    }
    if (a.dynamics == "integrator") {
      return std::make_shared<const AgentModel>(integrator_model(n, a.input_set, workspace)
                                                    .with_constants(a.lipschitz, a.jac_lower,
                                                                    a.input_set, workspace));
    }
    return std::make_shared<const AgentModel>(
        linear_model(a.A, a.B, a.lipschitz, a.jac_lower, a.input_set, workspace));
  } catch (const DomainError& e) {
    throw ConfigError("agent " + std::to_string(a.id) + " model: " + e.what());
  }
}

DisturbanceSignal disturbance_for(const ScenarioConfig& config, int agent_id) {
  switch (config.disturbance.kind) {
    case DisturbanceKind::benchmark:
      return benchmark_disturbance();
    case DisturbanceKind::random:
      return random_disturbance(config.state_dim, config.disturbance.bound, config.disturbance.hold,
                                config.seed, static_cast<std::uint64_t>(agent_id));
    case DisturbanceKind::zero:
      break;
  }
  return zero_disturbance(config.state_dim);
}

void derive_scenario(ScenarioConfig& c) {
  c.specs.clear();
  c.terminal_checks.clear();
  for (std::size_t i = 0; i < c.agents.size(); ++i) {
    const AgentConfig& a = c.agents[i];
    const std::string where = "agents[" + std::to_string(i) + "]";
    AgentSpec s;
    s.id = a.id;
    s.radius = a.radius;
    s.sensing_range = a.sensing_range;
    s.x_init = a.x_init;
    s.x_des = a.x_des;
    s.input_set = a.input_set;
    s.model = build_model(a, c.workspace);
    try {
      s.tube = synthesize_tube(a.rho, a.k_lower, a.lipschitz, a.jac_lower, a.w_tilde);
    } catch (const DomainError& e) {
      fail(where, e.what());
    }
    const double w_bound = disturbance_for(c, a.id).bound();
    if (w_bound > a.w_tilde) {
      spdlog::warn("agent {}: disturbance bound {} exceeds w_tilde {}", a.id, w_bound, a.w_tilde);
    }

    s.error_box = a.error_box.value_or(translate_box(c.workspace, -a.x_des));
    const BoxOrEmpty e_bar = pontryagin_diff_box_ball(s.error_box, s.tube.z_tilde);
    if (const auto* empty = std::get_if<EmptySet>(&e_bar)) {
      fail(where + ".error_box", "tube too large for error set (coordinate " +
                                     std::to_string(empty->coordinate) + ")");
    }
    s.tight_error = std::get<BoxSet>(e_bar);
    const BoxOrEmpty u_bar = pontryagin_diff_box_ball(a.input_set, s.tube.k_gain * s.tube.z_tilde);
    if (const auto* empty = std::get_if<EmptySet>(&u_bar)) {
      fail(where + ".input_set", "tube too large for input set (coordinate " +
                                     std::to_string(empty->coordinate) + ")");
    }
    s.tight_input = std::get<BoxSet>(u_bar);
    if (!s.tight_error.contains(a.x_init - a.x_des)) {
      fail(where + ".x_init", "initial error lies outside the tightened error set");
    }

    TerminalOptions opts = c.terminal;
    opts.fixed_P = a.P;
    opts.fixed_eta = a.eta;
    try {
      OcpWeights(a.Q, a.R, a.P.value_or(Matrix::Identity(a.Q.rows(), a.Q.cols())));
    } catch (const DomainError& e) {
      fail(where, e.what());
    }
    TerminalSynthesis term;
    try {
      term = synthesize_terminal(*s.model, a.x_des, a.Q, a.R, s.tight_input, s.tight_error, opts);
    } catch (const AssumptionViolation& e) {
      fail(where, e.what());
    } catch (const StabilizabilityError& e) {
      fail(where, e.what());
    } catch (const TerminalSetDegenerate& e) {
      fail(where, e.what());
    }
    s.terminal = term.terminal;
    try {
      s.weights.emplace(a.Q, a.R, term.terminal.P);
    } catch (const DomainError& e) {
      fail(where, e.what());
    }
    c.terminal_checks[a.id] = term.check;
    spdlog::info("agent {}: k = {}, z_tilde = {}, eta = {:.6g}, terminal check {}", a.id,
                 s.tube.k_gain, s.tube.z_tilde, s.terminal.eta, term.check.ok() ? "ok" : "FAILED");
    c.specs.push_back(std::move(s));
  }
}

}  // namespace tubempc
