// Command-line front end: run scenarios, verify offline ingredients, bench.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "tubempc/config.hpp"
#include "tubempc/errors.hpp"
#include "tubempc/simulation.hpp"
#include "tubempc/tube.hpp"

#ifndef TUBEMPC_CONFIG_DIR
#define TUBEMPC_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace tubempc;

namespace {

constexpr int kPass = 0;
constexpr int kError = 1;
constexpr int kFailed = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("tubempc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("TUBEMPC_LOG_LEVEL");
  if (env == nullptr) return;
  const std::string level(env);
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("TUBEMPC_LOG_LEVEL='{}' not recognized; using warn", level);
  }
}

void print_checks(const std::string& label, const MetricsReport& m) {
  std::cout << label << ": feasible=" << m.all_rounds_feasible << " tube=" << m.tube_ok()
            << " connectivity=" << m.connectivity_ok() << " inputs=" << m.inputs_ok()
            << " workspace=" << m.workspace_ok() << " convergence=" << m.convergence_ok()
            << " candidates=" << m.candidates_ok() << " iss=" << m.iss.passed()
            << " -> " << (m.passed() ? "PASS" : "FAIL") << '\n';
}

struct RunOutcome {
  int code = kError;
  std::string message;
};

RunOutcome run_one(const std::string& path, const fs::path& out_dir,
                   const ConfigOverrides& overrides, bool validate_only) {
  try {
    const ScenarioConfig config = load_config(path, overrides);
    if (validate_only) {
      std::string msg = fmt::format("{}: valid ({} agents, {} rounds, horizon {})", path,
                                    config.agents.size(), config.rounds(), config.horizon);
      for (const AgentSpec& s : config.specs) {
        msg += fmt::format("\n  agent {}: k={} z_tilde={} eta={:.6g}", s.id, s.tube.k_gain,
                           s.tube.z_tilde, s.terminal.eta);
      }
      return {kPass, msg};
    }
    fs::create_directories(out_dir);
    const SimulationResult result = run_closed_loop(config);
    emit_csv(result.log, (out_dir / "trajectory.csv").string());
    emit_rounds_csv(result.log, (out_dir / "rounds.csv").string());
    emit_metrics(result.metrics, (out_dir / "metrics").string());
    const bool ok = result.metrics.passed();
    return {ok ? kPass : kFailed,
            fmt::format("{}: {} (outputs in {})", path, ok ? "PASS" : "FAIL", out_dir.string())};
  } catch (const RoundInfeasible& e) {
    return {kFailed, fmt::format("{}: infeasible: {}", path, e.what())};
  } catch (const std::exception& e) {
    return {kError, fmt::format("{}: error: {}", path, e.what())};
  }
}

int cmd_run(const std::vector<std::string>& configs, const std::string& out,
            const ConfigOverrides& overrides, bool validate_only) {
  std::vector<RunOutcome> outcomes(configs.size());
  if (configs.size() == 1) {
    outcomes[0] = run_one(configs[0], out, overrides, validate_only);
  } else {
    // Batch: one thread per scenario, each writing under out/<stem>.
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      const fs::path dir = fs::path(out) / fs::path(configs[i]).stem();
      workers.emplace_back([&, i, dir] {
        outcomes[i] = run_one(configs[i], dir, overrides, validate_only);
      });
    }
    for (std::thread& w : workers) w.join();
  }
  int code = kPass;
  for (const RunOutcome& o : outcomes) {
    std::cout << o.message << '\n';
    if (o.code == kError) {
      code = kError;
    } else if (o.code == kFailed && code == kPass) {
      code = kFailed;
    }
  }
  return code;
}

int cmd_verify(const std::string& path, std::size_t grid, std::size_t trials) {
  const ScenarioConfig config = load_config(path);
  bool ok = true;
  for (const AgentSpec& spec : config.specs) {
    const AssumptionReport a = verify_assumptions(*spec.model, grid);
    std::cout << "agent " << spec.id << " assumptions: " << a.summary() << " -> "
              << (a.ok() ? "ok" : "FAIL") << '\n';
    RciOptions opt;
    opt.n_trials = trials;
    opt.horizon = config.total_time;
    const RciReport r = validate_rci(*spec.model, spec.tube, disturbance_for(config, spec.id), opt);
    std::cout << "agent " << spec.id << " tube: max_z_norm=" << r.max_z_norm
              << " bound=" << r.z_tilde * (1.0 + r.slack)
              << " lyapunov_violations=" << r.lyapunov_violations << " -> "
              << (r.passed() ? "ok" : "FAIL") << '\n';
    const TerminalCheck& t = config.terminal_checks.at(spec.id);
    std::cout << "agent " << spec.id << " terminal: eta=" << spec.terminal.eta
              << " input_margin=" << t.worst_input_margin << " worst_decrease=" << t.worst_decrease
              << " inside_state_box=" << t.inside_state_box << " -> " << (t.ok() ? "ok" : "FAIL")
              << '\n';
    ok = ok && a.ok() && r.passed() && t.ok();
  }
  std::cout << (ok ? "verify: PASS" : "verify: FAIL") << '\n';
  return ok ? kPass : kFailed;
}

int cmd_bench(const ConfigOverrides& overrides) {
  const std::string path = std::string(TUBEMPC_CONFIG_DIR) + "/benchmark.yaml";
  const ScenarioConfig config = load_config(path, overrides);
  SimulationResult result;
  try {
    result = run_closed_loop(config);
  } catch (const RoundInfeasible& e) {
    std::cout << "bench: infeasible: " << e.what() << '\n';
    return kFailed;
  }
  std::cout << "scenario=" << result.metrics.scenario << '\n';
  for (const auto& [k, v] : flatten_metrics(result.metrics)) {
    std::cout << k << '=' << fmt::format("{:.10g}", v) << '\n';
  }
  print_checks("bench", result.metrics);
  return result.metrics.passed() ? kPass : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Decentralized tube-based NMPC simulator"};
  app.require_subcommand(1);

  std::vector<std::string> configs;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> horizon, total_time;
  std::optional<std::size_t> substeps;
  bool validate_only = false;
  CLI::App* run = app.add_subcommand("run", "simulate one or more scenarios");
  run->add_option("--config", configs, "scenario file (repeat for a parallel batch)")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--horizon", horizon, "override the prediction horizon [s]");
  run->add_option("--total-time", total_time, "override the simulated time [s]");
  run->add_option("--substeps", substeps, "override RK4 steps per sampling period");
  run->add_flag("--validate-only", validate_only, "load and synthesize, do not simulate");

  std::string verify_config;
  std::size_t grid = 20;
  std::size_t trials = 100;
  CLI::App* verify = app.add_subcommand("verify", "check assumptions, tube and terminal sets");
  verify->add_option("--config", verify_config, "scenario file")->required();
  verify->add_option("--grid", grid, "grid points per dimension for the eigenvalue check");
  verify->add_option("--trials", trials, "Monte-Carlo trials for the tube check");

  CLI::App* bench = app.add_subcommand("bench", "run the bundled benchmark and print metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kError;
  }

  ConfigOverrides overrides;
  overrides.seed = seed;
  overrides.horizon = horizon;
  overrides.total_time = total_time;
  overrides.substeps = substeps;
  try {
    if (*run) return cmd_run(configs, out_dir, overrides, validate_only);
    if (*verify) return cmd_verify(verify_config, grid, trials);
    if (*bench) return cmd_bench(overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}
