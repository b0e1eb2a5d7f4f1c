#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "autobalance/autobalance.hpp"

namespace fs = std::filesystem;
using namespace autobalance;

namespace {

std::vector<std::int64_t> parse_steps(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const long long v = std::stoll(item, &used);
    if (used != item.size() || v < 0) throw std::invalid_argument("bad step '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("no steps given");
  return out;
}

void print_run(const RunResult& r) {
  if (r.ok)
    std::printf("seed %llu: final mse %.6e linf %.6e | best mse %.6e at step %lld | %.1f s\n",
                static_cast<unsigned long long>(r.seed), r.final_mse, r.final_linf, r.best_mse,
                static_cast<long long>(r.best_step), r.wall_seconds);
  else
    std::printf("seed %llu: FAILED: %s\n", static_cast<unsigned long long>(r.seed), r.error.c_str());
}

int cmd_train(const std::string& config, const std::vector<long long>& seeds, const std::string& out,
              const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = ExperimentConfig::load(config, overrides);
  if (!seeds.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < seeds.size(); ++i) list += (i ? "," : "") + std::to_string(seeds[i]);
    cfg.source.set("seeds=" + list + "]");
    cfg = ExperimentConfig::from(cfg.source);
  }
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  std::printf("%s / %s: %lld iterations, %zu seed(s) -> %s\n", cfg.problem.c_str(), to_string(cfg.method).c_str(),
              static_cast<long long>(cfg.iterations), cfg.seeds.size(), dir.string().c_str());
  const TrialsSummary s = run_trials(cfg, dir);
  for (const auto& r : s.runs) print_run(r);
  if (s.best_final) std::printf("best: seed %llu\n", static_cast<unsigned long long>(s.runs[*s.best_final].seed));
  return s.best_final ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint, const std::string& config) {
  const fs::path ck(checkpoint);
  const fs::path cfg_path = config.empty() ? ck.parent_path() / "config.toml" : fs::path(config);
  const ExperimentConfig cfg = ExperimentConfig::load(cfg_path.string());
  const ParamVector w = read_checkpoint(ck);
  const ErrorMetrics m = evaluate_checkpoint(cfg, w);
  nlohmann::json j{{"checkpoint", ck.string()}, {"problem", cfg.problem}, {"mse", m.mse}, {"linf", m.linf},
                   {"grid_points", cfg.eval_grid * cfg.eval_grid}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_quadratic(const std::vector<long long>& dims, const std::vector<double>& kappas, long long seeds,
                  long long steps, const std::string& out) {
  std::ofstream file;
  if (!out.empty()) {
    file.open(out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write '" + out + "'");
  }
  std::ostream& os = out.empty() ? std::cout : file;
  write_quad_csv_header(os);
  int violations = 0;
  for (long long d : dims)
    for (double kappa : kappas)
      for (long long seed = 0; seed < seeds; ++seed) {
        const QuadraticProblem p = make_problem(d, kappa, static_cast<std::uint64_t>(seed));
        for (const auto& r : certify(p, steps)) {
          write_quad_csv_row(os, static_cast<std::uint64_t>(seed), r);
          if (r.max_ratio > r.theorem_bound + 1e-9) ++violations;
        }
      }
  if (violations) std::fprintf(stderr, "%d run(s) exceeded their contraction bound\n", violations);
  return violations ? 2 : 0;
}

int cmd_diagnose(const std::string& config, const std::string& steps, double tau, long long seed,
                 const std::string& out, const std::vector<std::string>& overrides) {
  const ExperimentConfig cfg = ExperimentConfig::load(config, overrides);
  const std::vector<std::int64_t> at = parse_steps(steps);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) / "diagnose" : fs::path(out);
  fs::create_directories(dir);
  const DiagnosticsReport rep = run_diagnostics(cfg, static_cast<std::uint64_t>(seed), at, tau, dir);
  for (const auto& c : rep.conditions)
    std::printf("%-9s step %-6lld %-12s effective condition number %.6e\n", c.loss_name.c_str(),
                static_cast<long long>(c.step), to_string(c.preconditioner).c_str(), c.effective_kappa);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-combine multi-loss optimisation for PINNs: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, steps = "0,30000";
  std::vector<long long> seeds;
  std::vector<std::string> overrides;

  auto* train = app.add_subcommand("train", "Train every seed of a configuration");
  train->add_option("--config", config, "Configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seeds, "Run only these seeds");
  train->add_option("--out", out, "Output directory (default: output_dir from the config)");
  train->add_option("--set", overrides, "Override a config entry, key=value");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test grid");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.txt")->required()->check(CLI::ExistingFile);
  eval->add_option("--config", config, "Configuration (default: config.toml next to the checkpoint)");

  std::vector<long long> dims{2, 8, 16};
  std::vector<double> kappas{1.0, 1e2, 1e4};
  long long qseeds = 5, qsteps = 20000;
  auto* quad = app.add_subcommand("quadratic", "Certify contraction bounds on random quadratics");
  quad->add_option("--d", dims, "Dimensions");
  quad->add_option("--kappa", kappas, "Condition numbers of AᵀA");
  quad->add_option("--seeds", qseeds, "Problems per (d, kappa)");
  quad->add_option("--steps", qsteps, "Iterations per run");
  quad->add_option("--out", out, "CSV file (default: stdout)");

  double tau = 1e-6;
  long long dseed = 0;
  auto* diag = app.add_subcommand("diagnose", "Hessian spectra and update statistics of an AutoBalance run");
  diag->add_option("--config", config, "Configuration file")->required()->check(CLI::ExistingFile);
  diag->add_option("--steps", steps, "Comma-separated steps at which to record spectra");
  diag->add_option("--tau", tau, "Relative eigenvalue threshold of the effective condition number");
  diag->add_option("--seed", dseed, "Seed");
  diag->add_option("--out", out, "Output directory");
  diag->add_option("--set", overrides, "Override a config entry, key=value");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, seeds, out, overrides);
    if (*eval) return cmd_eval(checkpoint, config);
    if (*quad) return cmd_quadratic(dims, kappas, qseeds, qsteps, out);
    if (*diag) return cmd_diagnose(config, steps, tau, dseed, out, overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
