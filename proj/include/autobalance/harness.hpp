#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "autobalance/balance.hpp"
#include "autobalance/config.hpp"
#include "autobalance/diagnostics.hpp"
#include "autobalance/loss.hpp"
#include "autobalance/optim.hpp"
#include "autobalance/pde.hpp"

namespace autobalance {

struct MetricsRow {
  std::int64_t step = 0;
  double loss_res = 0;
  double loss_bc = 0; // boundary loss, or data loss for the inverse problem
  double lr = 0;
  double mse = 0;
  double linf = 0;
  std::int64_t ms = 0;
};

inline std::string format_real(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* metrics_header() { return "step,loss_res,loss_bc_or_data,lr,mse,linf,ms"; }

inline std::string format_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << format_real(r.loss_res) << ',' << format_real(r.loss_bc) << ',' << format_real(r.lr) << ','
     << format_real(r.mse) << ',' << format_real(r.linf) << ',' << r.ms;
  return os.str();
}

inline const char* stepdiag_header() { return "step,raw_grad_norm_ratio,update_norm_ratio,raw_cosine,update_cosine"; }

inline std::string format_row(const StepDiagnostics& d) {
  std::ostringstream os;
  os << d.step << ',' << format_real(d.raw_grad_norm_ratio) << ',' << format_real(d.update_norm_ratio) << ','
     << format_real(d.raw_cosine) << ',' << format_real(d.update_cosine);
  return os.str();
}

/// Line-buffered CSV that flushes after every row, so an interrupted run leaves
/// a parseable prefix.
class CsvLog {
 public:
  CsvLog() = default;
  CsvLog(const std::filesystem::path& path, const std::string& header) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    out_ << header << '\n';
    out_.flush();
  }
  void row(const std::string& line) {
    if (!out_.is_open()) return;
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---- checkpoints ----------------------------------------------------------

inline void write_checkpoint(const std::filesystem::path& path, const ParamVector& w) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out << w.size() << '\n';
  for (Eigen::Index i = 0; i < w.size(); ++i) out << format_real(w(i)) << '\n';
}

inline ParamVector read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  long long count = -1;
  if (!(in >> count) || count < 0) throw std::runtime_error("checkpoint '" + path.string() + "': bad length header");
  ParamVector w(static_cast<Eigen::Index>(count));
  for (long long i = 0; i < count; ++i)
    if (!(in >> w(static_cast<Eigen::Index>(i))))
      throw std::runtime_error("checkpoint '" + path.string() + "': truncated after " + std::to_string(i) + " values");
  std::string extra;
  if (in >> extra) throw std::runtime_error("checkpoint '" + path.string() + "': trailing data");
  return w;
}

// ---- problem instance -----------------------------------------------------

/// Seeds of the independent random streams of one run.
struct RunSeeds {
  std::uint64_t init, points, balancer;

  static RunSeeds derive(std::uint64_t seed) {
    auto mix = [](std::uint64_t z) {
      z += 0x9e3779b97f4a7c15ULL;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    return {mix(seed * 3 + 0), mix(seed * 3 + 1), mix(seed * 3 + 2)};
  }
};

/// Everything a run needs besides the parameters: problem, model, points and
/// the two loss components in the order (residual, boundary-or-data).
struct Instance {
  PdeProblem problem;
  Model model;
  SampleSet samples;
  std::unique_ptr<ResidualLoss> residual;
  std::unique_ptr<ValueMatchLoss> constraint;

  std::vector<const LossComponent*> losses() const { return {residual.get(), constraint.get()}; }
};

inline Instance make_instance(const ExperimentConfig& cfg, std::uint64_t seed) {
  Instance inst;
  inst.problem = cfg.pde();
  inst.model = cfg.model();
  inst.samples = sample(inst.problem, cfg.counts, RunSeeds::derive(seed).points, cfg.noise_variance);
  inst.residual = make_residual_loss(inst.problem, inst.model, inst.samples);
  inst.constraint = inst.problem.is_inverse() ? make_data_loss(inst.problem, inst.model, inst.samples)
                                              : make_boundary_loss(inst.problem, inst.model, inst.samples);
  return inst;
}

/// Grid and reference values for repeated error evaluation.
class Evaluator {
 public:
  Evaluator(const PdeProblem& p, const Model& m, Eigen::Index n) : problem_(p), model_(m) {
    const Domain dom = p.domain;
    grid_ = evaluation_grid(dom, n);
    exact_.resize(grid_.cols());
    for (Eigen::Index j = 0; j < grid_.cols(); ++j) exact_(j) = reference_field(p, grid_(0, j), grid_(1, j));
  }

  ErrorMetrics operator()(const ParamVector& w) const {
    const Vector pred = problem_.is_inverse()
                            ? Vector(forward_values(*model_.a_net, model_.a_params(w), grid_).row(0).transpose())
                            : Vector(forward_values(model_.u_net, model_.u_params(w), grid_).row(0).transpose());
    return error_metrics(pred, exact_);
  }

 private:
  PdeProblem problem_;
  Model model_;
  Matrix grid_;
  Vector exact_;
};

// ---- training -------------------------------------------------------------

/// Read-only view handed to observers before each update (and once after the
/// last one). `grads` are the λ-weighted per-loss gradients at `w`.
struct StepView {
  std::int64_t step = 0;
  const ParamVector& w;
  const std::vector<Vector>& grads;
  const std::vector<double>& values; // unweighted
  const MultiOptState* per_loss = nullptr; // AutoBalance
  const AdamState* shared = nullptr;       // pre-combine methods
  const AdamState* shadow = nullptr;       // shadow shared-Adam moments, when tracked
  const AdamHyper& hyper;
};

using Observer = std::function<void(const StepView&)>;

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  Observer observer;
  /// For AutoBalance, also accumulates the moments a single Adam would keep
  /// for the summed gradient along the same trajectory. Observers only.
  bool shadow_adam = false;
};

struct RunResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::optional<std::int64_t> failed_step;
  double final_mse = std::numeric_limits<double>::quiet_NaN();
  double final_linf = std::numeric_limits<double>::quiet_NaN();
  double best_mse = std::numeric_limits<double>::quiet_NaN();
  double best_linf = std::numeric_limits<double>::quiet_NaN();
  std::int64_t best_step = -1;
  double wall_seconds = 0;
  ParamVector params;
  std::vector<MetricsRow> metrics;
  std::vector<StepDiagnostics> stepdiag;
};

/// Trains one seed. Throws NonFiniteError (with the step) if a loss blows up.
inline RunResult train(const ExperimentConfig& cfg, std::uint64_t seed, const TrainOptions& opts = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const RunSeeds seeds = RunSeeds::derive(seed);
  Instance inst = make_instance(cfg, seed);
  const std::vector<const LossComponent*> losses = inst.losses();
  const std::size_t n = losses.size();
  const Vector lambda = (Vector(2) << cfg.lambda_res, cfg.lambda_bc).finished();
  const Evaluator evaluate_at(inst.problem, inst.model, cfg.eval_grid);

  ParamVector w = inst.model.init(seeds.init);
  const Eigen::Index dim = w.size();

  CsvLog metrics_log, stepdiag_log;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    metrics_log = CsvLog(*opts.out_dir / "metrics.csv", metrics_header());
    stepdiag_log = CsvLog(*opts.out_dir / "stepdiag.csv", stepdiag_header());
    std::ofstream(*opts.out_dir / "config.toml", std::ios::trunc) << cfg.echo();
  }

  const bool post_combine = cfg.method == TrainMethod::AutoBalance;
  MultiOptState multi;
  AdamState shared = AdamState::zeros(dim);
  AdamState shadow = AdamState::zeros(dim);
  std::optional<BalancerState> balancer;
  if (post_combine) multi = MultiOptState::zeros(n, dim, cfg.adam);
  else balancer.emplace(balance_method(cfg.method), n, seeds.balancer, cfg.ntk_period);

  RunResult res;
  res.seed = seed;
  std::vector<double> values(n);
  std::vector<Vector> raw(n), grads(n), updates(n);
  Vector combined;

  for (std::int64_t t = 0; t <= cfg.iterations; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      ParamVector g;
      const double v = losses[i]->value_grad(w, g);
      values[i] = v;
      raw[i] = std::move(g);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(values[i]) || !raw[i].allFinite()) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << t << " (" << losses[0]->name() << " = " << values[0] << ", "
            << losses[1]->name() << " = " << values[1] << ")";
        throw NonFiniteError(msg.str(), t);
      }
      grads[i] = lambda(static_cast<Eigen::Index>(i)) * raw[i];
    }

    const double lr = lr_at(cfg.schedule, t);
    if (t % cfg.log_every == 0 || t == cfg.iterations) {
      const ErrorMetrics em = evaluate_at(w);
      MetricsRow row;
      row.step = t;
      row.loss_res = values[0];
      row.loss_bc = values[1];
      row.lr = lr;
      row.mse = em.mse;
      row.linf = em.linf;
      if (cfg.record_wall_clock)
        row.ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      metrics_log.row(format_row(row));
      res.metrics.push_back(row);
      if (!(res.best_mse <= em.mse)) {
        res.best_mse = em.mse;
        res.best_linf = em.linf;
        res.best_step = t;
      }
      if (t == cfg.iterations) {
        res.final_mse = em.mse;
        res.final_linf = em.linf;
      }
    }

    if (opts.observer) {
      StepView view{t, w, grads, values, post_combine ? &multi : nullptr, post_combine ? nullptr : &shared,
                    opts.shadow_adam ? &shadow : nullptr, cfg.adam};
      opts.observer(view);
    }
    if (t == cfg.iterations) break;

    if (post_combine) {
      auto_adamw_step(multi, grads, w, lr, &updates);
      if (opts.shadow_adam) {
        combined = grads[0];
        for (std::size_t i = 1; i < n; ++i) combined += grads[i];
        shadow.k += 1;
        detail::update_moments(shadow, cfg.adam.beta1, cfg.adam.beta2, combined);
      }
    } else {
      BalancerState& b = *balancer;
      if (b.method == BalanceMethod::DWA) {
        b.weights = dwa_weights(b.loss_history, cfg.dwa_temperature);
        b.record_losses(values);
      } else if (b.method == BalanceMethod::NTK && t % b.recompute_period == 0) {
        Vector traces(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) traces(static_cast<Eigen::Index>(i)) = *losses[i]->ntk_trace(w);
        b.weights = ntk_weights(traces);
      }
      combined = b.combine(grads);
      adamw_step(shared, cfg.adam, combined, w, lr);
      // Per-loss shares of the step under the shared preconditioner.
      const double c2 = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(shared.k));
      const Vector denom = ((shared.v.array() / c2) + cfg.adam.eps).sqrt().matrix();
      for (std::size_t i = 0; i < n; ++i) updates[i] = grads[i].cwiseQuotient(denom);
    }

    if (t % cfg.stepdiag_every == 0) {
      const StepDiagnostics sd = step_diagnostics(grads, updates, t);
      stepdiag_log.row(format_row(sd));
      res.stepdiag.push_back(sd);
    }
  }

  res.params = w;
  res.ok = true;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opts.out_dir) write_checkpoint(*opts.out_dir / "checkpoint.txt", w);
  return res;
}

/// Error of a stored parameter vector under a configuration.
inline ErrorMetrics evaluate_checkpoint(const ExperimentConfig& cfg, const ParamVector& w) {
  const Model m = cfg.model();
  if (static_cast<std::size_t>(w.size()) != m.param_count())
    throw std::invalid_argument("checkpoint has " + std::to_string(w.size()) + " values, configuration expects " +
                                std::to_string(m.param_count()));
  return Evaluator(cfg.pde(), m, cfg.eval_grid)(w);
}

struct TrialsSummary {
  std::vector<RunResult> runs;
  std::optional<std::size_t> best_final; // index into runs, lowest final MSE
  std::optional<std::size_t> best_any;   // lowest MSE over training
};

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  if (!r.ok) {
    j["error"] = r.error;
    if (r.failed_step) j["failed_step"] = *r.failed_step;
  }
  j["final_mse"] = num(r.final_mse);
  j["final_linf"] = num(r.final_linf);
  j["best_mse"] = num(r.best_mse);
  j["best_linf"] = num(r.best_linf);
  j["best_step"] = r.best_step;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

/// Runs every seed of the configuration; a failing seed is recorded and the
/// others still run. Per-seed artifacts go to <out>/seed_<N>/.
inline TrialsSummary run_trials(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                const TrainOptions& base = {}) {
  TrialsSummary s;
  std::filesystem::create_directories(out);
  std::ofstream(out / "config.toml", std::ios::trunc) << cfg.echo();
  for (std::uint64_t seed : cfg.seeds) {
    TrainOptions opts = base;
    opts.out_dir = out / ("seed_" + std::to_string(seed));
    RunResult r;
    try {
      r = train(cfg, seed, opts);
    } catch (const NonFiniteError& e) {
      r.seed = seed;
      r.error = e.what();
      r.failed_step = e.step();
    } catch (const std::exception& e) {
      r.seed = seed;
      r.error = e.what();
    }
    s.runs.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < s.runs.size(); ++i) {
    const RunResult& r = s.runs[i];
    if (!r.ok) continue;
    if (!s.best_final || r.final_mse < s.runs[*s.best_final].final_mse) s.best_final = i;
    if (!s.best_any || r.best_mse < s.runs[*s.best_any].best_mse) s.best_any = i;
  }

  nlohmann::json j;
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [k, v] : cfg.source.raw()) echo[k] = v;
  j["config"] = echo;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : s.runs) j["runs"].push_back(to_json(r));
  j["best_final"] = s.best_final ? to_json(s.runs[*s.best_final]) : nlohmann::json(nullptr);
  j["best_over_training"] = s.best_any ? to_json(s.runs[*s.best_any]) : nlohmann::json(nullptr);
  j["grid_points"] = cfg.eval_grid * cfg.eval_grid;
  std::ofstream(out / "summary.json", std::ios::trunc) << j.dump(2) << '\n';
  return s;
}

// ---- Hessian diagnostics --------------------------------------------------

struct ConditionRecord {
  std::string loss_name;
  std::int64_t step = 0;
  Preconditioner preconditioner = Preconditioner::None;
  double effective_kappa = 0;
};

struct DiagnosticsReport {
  std::vector<SpectrumRecord> spectra;
  std::vector<ConditionRecord> conditions;
  RunResult run;
};

/// Bias-corrected second moment after folding in the gradient of the current step.
inline Vector corrected_second_moment(const AdamState& s, const AdamHyper& h, const Vector& g) {
  const Vector v = h.beta2 * s.v + (1.0 - h.beta2) * g.cwiseProduct(g);
  return v / (1.0 - std::pow(h.beta2, static_cast<double>(s.k + 1)));
}

/// Trains an AutoBalance run and, at each step in `steps`, records the spectra
/// of both weighted loss Hessians: raw, preconditioned by a shared Adam's
/// second moment (tracked along the same trajectory), and preconditioned by the
/// loss's own AutoBalance second moment.
inline DiagnosticsReport run_diagnostics(const ExperimentConfig& cfg, std::uint64_t seed,
                                         const std::vector<std::int64_t>& steps, double tau,
                                         const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (cfg.method != TrainMethod::AutoBalance) throw std::invalid_argument("diagnose: method must be AutoBalance");
  for (auto s : steps)
    if (s < 0 || s > cfg.iterations) throw std::invalid_argument("diagnose: step " + std::to_string(s) + " outside the run");
  DiagnosticsReport rep;
  const Instance inst = make_instance(cfg, seed);
  const std::vector<const LossComponent*> losses = inst.losses();
  const double lambda[2] = {cfg.lambda_res, cfg.lambda_bc};

  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.shadow_adam = true;
  opts.observer = [&](const StepView& view) {
    if (std::find(steps.begin(), steps.end(), view.step) == steps.end()) return;
    Vector combined = view.grads[0] + view.grads[1];
    const Vector v_adam = corrected_second_moment(*view.shadow, view.hyper, combined);
    for (std::size_t i = 0; i < 2; ++i) {
      const ScaledLoss weighted(*losses[i], lambda[i]);
      const Matrix h = hessian(weighted, view.w);
      const Vector v_own = corrected_second_moment(view.per_loss->per_loss[i], view.hyper, view.grads[i]);
      const std::pair<Preconditioner, Vector> variants[3] = {
          {Preconditioner::None, symmetric_eigenvalues(h)},
          {Preconditioner::AdamV, preconditioned_spectrum(h, v_adam, view.hyper.eps)},
          {Preconditioner::AutoBalanceV, preconditioned_spectrum(h, v_own, view.hyper.eps)}};
      for (const auto& [tag, ev] : variants) {
        rep.spectra.push_back({losses[i]->name(), view.step, tag, ev});
        double kappa = std::numeric_limits<double>::quiet_NaN();
        try {
          kappa = effective_condition_number(ev, tau);
        } catch (const std::domain_error&) {
        }
        rep.conditions.push_back({losses[i]->name(), view.step, tag, kappa});
      }
    }
  };
  rep.run = train(cfg, seed, opts);

  if (out_dir) {
    CsvLog spectra(*out_dir / "spectra.csv", "loss,step,preconditioner,index,value");
    for (const auto& s : rep.spectra)
      for (Eigen::Index k = 0; k < s.eigenvalues.size(); ++k)
        spectra.row(s.loss_name + "," + std::to_string(s.step) + "," + to_string(s.preconditioner) + "," +
                    std::to_string(k) + "," + format_real(s.eigenvalues(k)));
    CsvLog cond(*out_dir / "condition.csv", "loss,step,preconditioner,effective_condition_number");
    for (const auto& c : rep.conditions)
      cond.row(c.loss_name + "," + std::to_string(c.step) + "," + to_string(c.preconditioner) + "," +
               format_real(c.effective_kappa));
  }
  return rep;
}

} // namespace autobalance
