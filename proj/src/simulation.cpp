#include "tubempc/simulation.hpp"

#include <Eigen/Eigenvalues>

#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tubempc/errors.hpp"
#include "tubempc/tube.hpp"

namespace tubempc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double lambda_min(const Matrix& P) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(P, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double terminal_radius(const AgentSpec& s) {
  return std::sqrt(s.terminal.eta / lambda_min(s.terminal.P));
}

AgentSample make_sample(const AgentSpec& spec, const Vector& e, const Vector& e_bar,
                        const Vector& u_bar) {
  AgentSample a;
  a.e = e;
  a.e_bar = e_bar;
  a.x = e + spec.x_des;
  a.x_bar = e_bar + spec.x_des;
  a.u_bar = u_bar;
  a.u = total_control(u_bar, ancillary_feedback(e, e_bar, spec.tube.k_gain));
  a.z_norm = (e - e_bar).norm();
  const Vector du = u_bar - spec.terminal.u_eq;
  a.stage_cost = e_bar.dot(spec.weights->Q() * e_bar) + du.dot(spec.weights->R() * du);
  return a;
}

std::vector<double> pair_distances(const std::vector<AgentSample>& agents,
                                   const std::vector<int>& ids,
                                   const std::vector<std::pair<int, int>>& pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    const auto a = std::find(ids.begin(), ids.end(), i) - ids.begin();
    const auto b = std::find(ids.begin(), ids.end(), j) - ids.begin();
    out.push_back((agents[static_cast<std::size_t>(a)].x - agents[static_cast<std::size_t>(b)].x).norm());
  }
  return out;
}

}  // namespace

SimulationResult run_closed_loop(const ScenarioConfig& config) {
  std::vector<AgentSpec> specs = config.specs;
  std::sort(specs.begin(), specs.end(),
            [](const AgentSpec& a, const AgentSpec& b) { return a.id < b.id; });
  const FleetTopology topology = build_neighbor_sets(specs, config.epsilon);
  const ConfigFeasibility feasible = check_feasible_configs(specs, topology);
  if (!feasible.feasible) {
    for (const auto& [i, j] : feasible.violations) {
      spdlog::warn("desired configuration infeasible for neighbors {} and {}", i, j);
    }
  }
  Coordinator coordinator(specs, topology, config.fleet_settings());

  SimulationResult result;
  SimulationLog& log = result.log;
  log.state_dim = config.state_dim;
  std::set<std::pair<int, int>> pairs;
  for (const AgentSpec& s : specs) {
    log.agent_ids.push_back(s.id);
    for (int j : topology.of(s.id)) pairs.emplace(std::min(s.id, j), std::max(s.id, j));
  }
  log.pairs.assign(pairs.begin(), pairs.end());

  std::vector<DisturbanceSignal> disturbances;
  std::map<int, Vector> e, e_bar;
  for (const AgentSpec& s : specs) {
    disturbances.push_back(disturbance_for(config, s.id));
    e[s.id] = s.x_init - s.x_des;
    e_bar[s.id] = e[s.id];
  }

  const auto n = static_cast<Eigen::Index>(config.state_dim);
  const std::size_t sub = config.substeps;
  const double h = config.delta / static_cast<double>(sub);
  const std::size_t rounds = config.rounds();
  std::vector<Vector> last_u_bar(specs.size());

  for (std::size_t k = 0; k < rounds; ++k) {
    const double t_k = static_cast<double>(k) * config.delta;
    const std::map<int, AgentRoundResult> results = coordinator.run_round(t_k, e_bar);

    std::vector<std::vector<AgentSample>> samples(sub);
    std::vector<Vector> applied;
    for (std::size_t a = 0; a < specs.size(); ++a) {
      const AgentSpec& spec = specs[a];
      const AgentRoundResult& r = results.at(spec.id);
      const AgentModel& model = *spec.model;
      const DisturbanceSignal& w = disturbances[a];

      RoundRecord rec;
      rec.round = static_cast<int>(k);
      rec.t = t_k;
      rec.agent = spec.id;
      rec.status = r.solution.status;
      rec.inner_iterations = r.solution.inner_iterations;
      rec.outer_iterations = r.solution.outer_iterations;
      rec.kkt_residual = r.solution.kkt_residual;
      rec.max_violation = r.solution.max_violation;
      rec.cost = r.solution.cost;
      rec.warm_started = r.warm_started;
      rec.wall_seconds = r.wall_seconds;
      if (r.candidate) {
        rec.has_candidate = true;
        rec.candidate_admissible = r.candidate->admissible();
        rec.candidate_terminal_margin = r.candidate->terminal_margin;
        rec.candidate_state_margin = r.candidate->worst_state_margin;
        rec.candidate_input_margin = r.candidate->worst_input_margin;
        if (!rec.candidate_admissible) {
          spdlog::warn("t = {:.2f} agent {}: shifted candidate not admissible (terminal {:.3e}, "
                       "state {:.3e}, input {:.3e})",
                       t_k, spec.id, rec.candidate_terminal_margin, rec.candidate_state_margin,
                       rec.candidate_input_margin);
        }
      }
      log.rounds.push_back(rec);

      const Vector u_bar = r.solution.controls.front();
      applied.push_back(u_bar);
      last_u_bar[a] = u_bar;
      const double k_gain = spec.tube.k_gain;
      const VectorField field = [&](double t, const Vector& z) {
        const Vector ze = z.head(n);
        const Vector zb = z.tail(n);
        const Vector u = u_bar + ancillary_feedback(ze, zb, k_gain);
        Vector dz(2 * n);
        dz.head(n) = model.eval(ze + spec.x_des, u) + w.eval(t);
        dz.tail(n) = model.eval(zb + spec.x_des, u_bar);
        return dz;
      };
      Vector z(2 * n);
      z << e[spec.id], e_bar[spec.id];
      for (std::size_t j = 0; j < sub; ++j) {
        const double t = t_k + static_cast<double>(j) * h;
        samples[j].push_back(make_sample(spec, z.head(n), z.tail(n), u_bar));
        z = rk4_step(field, t, z, h);
        if (!z.allFinite()) {
          throw IntegrationDiverged(t + h, "agent " + std::to_string(spec.id) +
                                               ": closed loop diverged at t = " +
                                               std::to_string(t + h));
        }
      }
      e[spec.id] = z.head(n);
      e_bar[spec.id] = z.tail(n);
      const Vector& predicted = r.solution.predicted.states[sub];
      if (sub == r.problem.substeps && predicted != e_bar[spec.id]) {
        spdlog::debug("agent {}: nominal state differs from prediction by {:.3e}", spec.id,
                      (predicted - e_bar[spec.id]).norm());
      }
    }
    log.first_controls.push_back(std::move(applied));
    for (std::size_t j = 0; j < sub; ++j) {
      LogRow row;
      row.t = t_k + static_cast<double>(j) * h;
      row.agents = std::move(samples[j]);
      row.distances = pair_distances(row.agents, log.agent_ids, log.pairs);
      log.rows.push_back(std::move(row));
    }
    if ((k + 1) % 10 == 0) spdlog::info("t = {:.2f}: {} rounds done", t_k + config.delta, k + 1);
  }

  LogRow last;
  last.t = static_cast<double>(rounds) * config.delta;
  for (std::size_t a = 0; a < specs.size(); ++a) {
    const AgentSpec& spec = specs[a];
    const Vector u_bar = rounds > 0 ? last_u_bar[a] : Vector(Vector::Zero(n));
    last.agents.push_back(make_sample(spec, e[spec.id], e_bar[spec.id], u_bar));
  }
  last.distances = pair_distances(last.agents, log.agent_ids, log.pairs);
  log.rows.push_back(std::move(last));

  result.metrics = compute_metrics(log, config);
  return result;
}

bool IssReport::passed() const {
  return std::all_of(agents.begin(), agents.end(),
                     [](const IssAgentReport& a) { return a.bounded_ok && a.tail_ok; });
}

IssReport iss_envelope_check(const SimulationLog& log, const ScenarioConfig& config) {
  IssReport report;
  if (log.rows.empty()) return report;
  const double t_end = log.rows.back().t;
  const double t_tail = t_end - config.iss.tail_fraction * t_end;
  for (std::size_t a = 0; a < log.agent_ids.size(); ++a) {
    const AgentSpec& spec = config.spec(log.agent_ids[a]);
    IssAgentReport r;
    r.id = spec.id;
    const double e0 = log.rows.front().agents[a].e.norm();
    const double envelope = e0 + spec.tube.z_tilde + config.iss.slack;
    r.tail_cap = spec.tube.z_tilde + terminal_radius(spec) + config.iss.slack;
    r.worst_bounded_excess = -kInf;
    for (const LogRow& row : log.rows) {
      const double en = row.agents[a].e.norm();
      if (row.t >= config.iss.transient) {
        r.worst_bounded_excess = std::max(r.worst_bounded_excess, en - envelope);
      }
      if (row.t >= t_tail - 1e-12) r.tail_sup = std::max(r.tail_sup, en);
    }
    r.bounded_ok = r.worst_bounded_excess <= 0.0;
    r.tail_ok = r.tail_sup <= r.tail_cap;
    report.agents.push_back(r);
  }
  return report;
}

MetricsReport compute_metrics(const SimulationLog& log, const ScenarioConfig& config) {
  MetricsReport m;
  m.scenario = config.name;
  m.seed = config.seed;
  m.rounds = static_cast<int>(config.rounds());
  std::size_t feasible_records = 0;
  for (const RoundRecord& r : log.rounds) {
    if (r.status != SolveStatus::infeasible) ++feasible_records;
  }
  m.all_rounds_feasible = feasible_records == config.rounds() * log.agent_ids.size();

  for (std::size_t a = 0; a < log.agent_ids.size(); ++a) {
    const AgentSpec& spec = config.spec(log.agent_ids[a]);
    AgentMetrics am;
    am.id = spec.id;
    am.z_tilde = spec.tube.z_tilde;
    const auto n = static_cast<std::size_t>(spec.input_set.dim());
    am.max_abs_input.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      const auto i = static_cast<Eigen::Index>(c);
      am.input_bound.push_back(
          std::max(std::abs(spec.input_set.lower()[i]), std::abs(spec.input_set.upper()[i])));
    }
    am.input_margin = kInf;
    am.workspace_margin = kInf;
    for (const LogRow& row : log.rows) {
      const AgentSample& s = row.agents[a];
      am.max_z_norm = std::max(am.max_z_norm, s.z_norm);
      for (std::size_t c = 0; c < n; ++c) {
        am.max_abs_input[c] = std::max(am.max_abs_input[c], std::abs(s.u[static_cast<Eigen::Index>(c)]));
      }
      am.input_margin = std::min(am.input_margin, spec.input_set.margin(s.u));
      am.workspace_margin = std::min(am.workspace_margin, config.workspace.margin(s.x));
    }
    am.containment_margin = 1.02 * am.z_tilde - am.max_z_norm;
    if (!log.rows.empty()) am.final_error_norm = log.rows.back().agents[a].e.norm();
    am.final_error_bound = am.z_tilde + terminal_radius(spec) + config.iss.slack;
    for (const RoundRecord& r : log.rounds) {
      if (r.agent != spec.id) continue;
      if (r.status != SolveStatus::infeasible) ++am.feasible_rounds;
      if (r.has_candidate) {
        ++am.candidate_checks;
        if (!r.candidate_admissible) ++am.candidate_failures;
      }
    }
    m.agents.push_back(std::move(am));
  }

  for (std::size_t p = 0; p < log.pairs.size(); ++p) {
    PairMetrics pm;
    pm.i = log.pairs[p].first;
    pm.j = log.pairs[p].second;
    for (const LogRow& row : log.rows) pm.max_distance = std::max(pm.max_distance, row.distances[p]);
    const double d = std::min(config.spec(pm.i).sensing_range, config.spec(pm.j).sensing_range);
    pm.min_clearance = d - pm.max_distance;
    m.pairs.push_back(pm);
  }
  m.iss = iss_envelope_check(log, config);
  return m;
}

bool MetricsReport::tube_ok() const {
  return std::all_of(agents.begin(), agents.end(),
                     [](const AgentMetrics& a) { return a.containment_margin >= 0.0; });
}

bool MetricsReport::connectivity_ok() const {
  return std::all_of(pairs.begin(), pairs.end(),
                     [](const PairMetrics& p) { return p.min_clearance > 0.0; });
}

bool MetricsReport::inputs_ok() const {
  return std::all_of(agents.begin(), agents.end(),
                     [](const AgentMetrics& a) { return a.input_margin >= -1e-9; });
}

bool MetricsReport::workspace_ok() const {
  return std::all_of(agents.begin(), agents.end(),
                     [](const AgentMetrics& a) { return a.workspace_margin >= 0.0; });
}

bool MetricsReport::convergence_ok() const {
  return std::all_of(agents.begin(), agents.end(), [](const AgentMetrics& a) {
    return a.final_error_norm <= a.final_error_bound;
  });
}

bool MetricsReport::candidates_ok() const {
  return std::all_of(agents.begin(), agents.end(),
                     [](const AgentMetrics& a) { return a.candidate_failures == 0; });
}

bool MetricsReport::passed() const {
  return all_rounds_feasible && tube_ok() && connectivity_ok() && inputs_ok() && workspace_ok() &&
         convergence_ok() && candidates_ok() && iss.passed();
}

std::string csv_header(const SimulationLog& log) {
  std::string h = "t";
  const auto add_block = [&](int id, const char* name) {
    for (std::size_t c = 1; c <= log.state_dim; ++c) h += fmt::format(",a{}_{}_{}", id, name, c);
  };
  for (int id : log.agent_ids) {
    add_block(id, "x");
    add_block(id, "xbar");
    add_block(id, "u");
    add_block(id, "ubar");
    h += fmt::format(",a{}_znorm,a{}_stagecost", id, id);
  }
  for (const auto& [i, j] : log.pairs) h += fmt::format(",dist_{}_{}", i, j);
  return h;
}

void emit_csv(const SimulationLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << csv_header(log) << '\n';
  std::string line;
  for (const LogRow& row : log.rows) {
    line = fmt::format("{:.17g}", row.t);
    for (const AgentSample& s : row.agents) {
      for (const Vector* v : {&s.x, &s.x_bar, &s.u, &s.u_bar}) {
        for (Eigen::Index c = 0; c < v->size(); ++c) line += fmt::format(",{:.17g}", (*v)[c]);
      }
      line += fmt::format(",{:.17g},{:.17g}", s.z_norm, s.stage_cost);
    }
    for (double d : row.distances) line += fmt::format(",{:.17g}", d);
    out << line << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

void emit_rounds_csv(const SimulationLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "round,t,agent,status,inner_iterations,outer_iterations,kkt_residual,max_violation,cost,"
         "warm_started,candidate_checked,candidate_admissible,candidate_terminal_margin,"
         "candidate_state_margin,candidate_input_margin,wall_seconds\n";
  for (const RoundRecord& r : log.rounds) {
    out << fmt::format("{},{:.17g},{},{},{},{},{:.17g},{:.17g},{:.17g},{},{},{},{:.17g},{:.17g},{:.17g},{:.6f}\n",
                       r.round, r.t, r.agent, to_string(r.status), r.inner_iterations,
                       r.outer_iterations, r.kkt_residual, r.max_violation, r.cost,
                       r.warm_started ? 1 : 0, r.has_candidate ? 1 : 0,
                       r.candidate_admissible ? 1 : 0, r.candidate_terminal_margin,
                       r.candidate_state_margin, r.candidate_input_margin, r.wall_seconds);
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::pair<std::string, double>> flatten_metrics(const MetricsReport& m) {
  std::vector<std::pair<std::string, double>> kv;
  kv.emplace_back("rounds", m.rounds);
  kv.emplace_back("all_rounds_feasible", m.all_rounds_feasible ? 1.0 : 0.0);
  for (const AgentMetrics& a : m.agents) {
    const std::string p = fmt::format("agent{}.", a.id);
    kv.emplace_back(p + "max_z_norm", a.max_z_norm);
    kv.emplace_back(p + "z_tilde", a.z_tilde);
    kv.emplace_back(p + "containment_margin", a.containment_margin);
    kv.emplace_back(p + "final_error_norm", a.final_error_norm);
    kv.emplace_back(p + "final_error_bound", a.final_error_bound);
    for (std::size_t c = 0; c < a.max_abs_input.size(); ++c) {
      kv.emplace_back(fmt::format("{}max_abs_u_{}", p, c + 1), a.max_abs_input[c]);
      kv.emplace_back(fmt::format("{}u_bound_{}", p, c + 1), a.input_bound[c]);
    }
    kv.emplace_back(p + "input_margin", a.input_margin);
    kv.emplace_back(p + "workspace_margin", a.workspace_margin);
    kv.emplace_back(p + "feasible_rounds", a.feasible_rounds);
    kv.emplace_back(p + "candidate_checks", a.candidate_checks);
    kv.emplace_back(p + "candidate_failures", a.candidate_failures);
  }
  for (const PairMetrics& pm : m.pairs) {
    const std::string p = fmt::format("pair_{}_{}.", pm.i, pm.j);
    kv.emplace_back(p + "max_distance", pm.max_distance);
    kv.emplace_back(p + "min_clearance", pm.min_clearance);
  }
  for (const IssAgentReport& r : m.iss.agents) {
    const std::string p = fmt::format("iss{}.", r.id);
    kv.emplace_back(p + "bounded_ok", r.bounded_ok ? 1.0 : 0.0);
    kv.emplace_back(p + "worst_bounded_excess", r.worst_bounded_excess);
    kv.emplace_back(p + "tail_sup", r.tail_sup);
    kv.emplace_back(p + "tail_cap", r.tail_cap);
    kv.emplace_back(p + "tail_ok", r.tail_ok ? 1.0 : 0.0);
  }
  kv.emplace_back("passed", m.passed() ? 1.0 : 0.0);
  return kv;
}

std::string metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["scenario"] = m.scenario;
  j["seed"] = m.seed;
  j["rounds"] = m.rounds;
  j["all_rounds_feasible"] = m.all_rounds_feasible;
  j["checks"] = {{"tube", m.tube_ok()},           {"connectivity", m.connectivity_ok()},
                 {"inputs", m.inputs_ok()},       {"workspace", m.workspace_ok()},
                 {"convergence", m.convergence_ok()}, {"candidates", m.candidates_ok()},
                 {"iss", m.iss.passed()},         {"passed", m.passed()}};
  j["agents"] = nlohmann::ordered_json::array();
  for (const AgentMetrics& a : m.agents) {
    j["agents"].push_back({{"id", a.id},
                           {"max_z_norm", a.max_z_norm},
                           {"z_tilde", a.z_tilde},
                           {"containment_margin", a.containment_margin},
                           {"final_error_norm", a.final_error_norm},
                           {"final_error_bound", a.final_error_bound},
                           {"max_abs_input", a.max_abs_input},
                           {"input_bound", a.input_bound},
                           {"input_margin", a.input_margin},
                           {"workspace_margin", a.workspace_margin},
                           {"feasible_rounds", a.feasible_rounds},
                           {"candidate_checks", a.candidate_checks},
                           {"candidate_failures", a.candidate_failures}});
  }
  j["pairs"] = nlohmann::ordered_json::array();
  for (const PairMetrics& p : m.pairs) {
    j["pairs"].push_back({{"i", p.i},
                          {"j", p.j},
                          {"max_distance", p.max_distance},
                          {"min_clearance", p.min_clearance}});
  }
  j["iss"] = nlohmann::ordered_json::array();
  for (const IssAgentReport& r : m.iss.agents) {
    j["iss"].push_back({{"id", r.id},
                        {"bounded_ok", r.bounded_ok},
                        {"worst_bounded_excess", r.worst_bounded_excess},
                        {"tail_sup", r.tail_sup},
                        {"tail_cap", r.tail_cap},
                        {"tail_ok", r.tail_ok}});
  }
  return j.dump(2);
}

void emit_metrics(const MetricsReport& report, const std::string& stem) {
  {
    std::ofstream out(stem + ".txt");
    if (!out) throw std::runtime_error("cannot write " + stem + ".txt");
    out << "scenario=" << report.scenario << '\n' << "seed=" << report.seed << '\n';
    for (const auto& [k, v] : flatten_metrics(report)) out << k << '=' << fmt::format("{:.17g}", v) << '\n';
  }
  std::ofstream out(stem + ".json");
  if (!out) throw std::runtime_error("cannot write " + stem + ".json");
  out << metrics_json(report) << '\n';
}

}  // namespace tubempc
