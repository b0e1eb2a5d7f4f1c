#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "autobalance/balance.hpp"
#include "autobalance/network.hpp"
#include "autobalance/optim.hpp"
#include "autobalance/pde.hpp"

namespace autobalance {

/// Flat `key = value` file: strings in double quotes, numbers, true/false, and
/// one-line arrays of numbers. `#` starts a comment. Tables are not supported.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<config>") {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string body = trim(strip_comment(line));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key.empty() || value.empty())
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key or value");
      for (char c : key)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
          throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad key '" + key + "'");
      if (kv.values_.count(key)) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  /// Applies `key=value` overrides (same value syntax as the file).
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& raw() const { return values_; }

  std::string get_string(const std::string& key) const {
    const std::string& v = require(key);
    if (v.size() < 2 || v.front() != '"' || v.back() != '"')
      throw std::runtime_error("config key '" + key + "' must be a quoted string");
    return v.substr(1, v.size() - 2);
  }

  double get_double(const std::string& key) const { return to_double(key, require(key)); }

  std::int64_t get_int(const std::string& key) const {
    const std::string& v = require(key);
    std::int64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw std::runtime_error("config key '" + key + "' must be an integer, got '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = require(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::runtime_error("config key '" + key + "' must be true or false");
  }

  std::vector<double> get_list(const std::string& key) const {
    const std::string& v = require(key);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      throw std::runtime_error("config key '" + key + "' must be an array");
    std::vector<double> out;
    std::stringstream items(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(items, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(to_double(key, item));
    }
    return out;
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    if constexpr (std::is_same_v<T, bool>) return get_bool(key);
    else if constexpr (std::is_same_v<T, std::string>) return get_string(key);
    else if constexpr (std::is_integral_v<T>) return static_cast<T>(get_int(key));
    else return static_cast<T>(get_double(key));
  }

 private:
  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "' must be a number, got '" + v + "'");
    }
  }

  const std::string& require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config is missing required key '" + key + "'");
    return it->second;
  }

  std::map<std::string, std::string> values_;
};

enum class TrainMethod { AutoBalance, EW, DWA, NTK, PCGrad, MGDA, IMTLG, ConFIG };

inline std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::AutoBalance: return "AutoBalance";
    case TrainMethod::EW: return "EW";
    case TrainMethod::DWA: return "DWA";
    case TrainMethod::NTK: return "NTK";
    case TrainMethod::PCGrad: return "PCGrad";
    case TrainMethod::MGDA: return "MGDA";
    case TrainMethod::IMTLG: return "IMTLG";
    case TrainMethod::ConFIG: return "ConFIG";
  }
  return "?";
}

inline TrainMethod train_method_from_string(const std::string& s) {
  for (TrainMethod m : {TrainMethod::AutoBalance, TrainMethod::EW, TrainMethod::DWA, TrainMethod::NTK,
                        TrainMethod::PCGrad, TrainMethod::MGDA, TrainMethod::IMTLG, TrainMethod::ConFIG})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

inline BalanceMethod balance_method(TrainMethod m) {
  switch (m) {
    case TrainMethod::EW: return BalanceMethod::EW;
    case TrainMethod::DWA: return BalanceMethod::DWA;
    case TrainMethod::NTK: return BalanceMethod::NTK;
    case TrainMethod::PCGrad: return BalanceMethod::PCGrad;
    case TrainMethod::MGDA: return BalanceMethod::MGDA;
    case TrainMethod::IMTLG: return BalanceMethod::IMTLG;
    case TrainMethod::ConFIG: return BalanceMethod::ConFIG;
    case TrainMethod::AutoBalance: break;
  }
  throw std::invalid_argument("AutoBalance has no pre-combine balancer");
}

struct ExperimentConfig {
  std::string problem;
  TrainMethod method = TrainMethod::AutoBalance;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> coef_hidden; // inverse problem only
  Activation activation = Activation::Tanh;
  SampleCounts counts;
  double noise_variance = 0.01;
  double lambda_res = 1.0;
  double lambda_bc = 1.0; // boundary weight, or data weight for the inverse problem
  AdamHyper adam;
  ScheduleSpec schedule;
  std::int64_t iterations = 0;
  std::vector<std::uint64_t> seeds;
  std::int64_t log_every = 50;
  std::int64_t stepdiag_every = 50;
  std::int64_t ntk_period = 1000;
  double dwa_temperature = 2.0;
  std::int64_t eval_grid = 300;
  bool record_wall_clock = false;
  std::string output_dir = "out";

  KeyValueFile source;

  PdeProblem pde() const { return problem_by_name(problem); }

  Model model() const {
    Model m;
    m.u_net = NetworkSpec{2, hidden, 1, activation};
    if (pde().is_inverse()) m.a_net = NetworkSpec{2, coef_hidden, 1, activation};
    return m;
  }

  void validate() const {
    const PdeProblem p = pde();
    if (iterations <= 0) throw std::invalid_argument("config: iterations must be positive");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
    if (hidden.empty()) throw std::invalid_argument("config: hidden must list at least one width");
    if (p.is_inverse() && coef_hidden.empty()) throw std::invalid_argument("config: inverse problem needs coef_hidden");
    if (counts.interior == 0) throw std::invalid_argument("config: n_interior must be positive");
    if (!p.is_inverse() && counts.boundary == 0) throw std::invalid_argument("config: n_boundary must be positive");
    if (p.is_inverse() && counts.data_u + counts.data_a == 0) throw std::invalid_argument("config: no observations");
    if (!(lambda_res > 0.0) || !(lambda_bc > 0.0)) throw std::invalid_argument("config: loss weights must be positive");
    if (log_every <= 0 || stepdiag_every <= 0 || ntk_period <= 0) throw std::invalid_argument("config: cadences must be positive");
    if (eval_grid < 2) throw std::invalid_argument("config: eval_grid must be at least 2");
    adam.validate(true);
    schedule.validate();
    model().u_net.validate();
  }

  static ExperimentConfig from(const KeyValueFile& kv) {
    static const char* known[] = {
        "problem", "method", "hidden", "coef_hidden", "activation", "n_interior", "n_boundary", "n_data_u",
        "n_data_a", "noise_variance", "lambda_res", "lambda_bc", "lambda_data", "beta1", "beta2", "eps",
        "weight_decay", "lr_start", "lr_peak", "warmup_iters", "decay_factor", "decay_period", "trigger_every",
        "lr_floor", "iterations", "seeds", "log_every", "stepdiag_every", "ntk_period", "dwa_temperature",
        "eval_grid", "record_wall_clock", "output_dir"};
    for (const auto& [key, _] : kv.raw()) {
      bool ok = false;
      for (const char* k : known) ok = ok || key == k;
      if (!ok) throw std::runtime_error("config: unknown key '" + key + "'");
    }
    auto widths = [&](const std::string& key) {
      std::vector<std::size_t> out;
      if (!kv.has(key)) return out;
      for (double w : kv.get_list(key)) {
        if (!(w >= 1.0) || w != static_cast<double>(static_cast<std::size_t>(w)))
          throw std::runtime_error("config: '" + key + "' must hold positive integers");
        out.push_back(static_cast<std::size_t>(w));
      }
      return out;
    };

    ExperimentConfig c;
    c.source = kv;
    c.problem = kv.get_string("problem");
    c.method = train_method_from_string(kv.get_or<std::string>("method", "AutoBalance"));
    c.hidden = widths("hidden");
    c.coef_hidden = widths("coef_hidden");
    c.activation = activation_from_string(kv.get_or<std::string>("activation", "tanh"));
    c.counts.interior = kv.get_or<std::size_t>("n_interior", 0);
    c.counts.boundary = kv.get_or<std::size_t>("n_boundary", 0);
    c.counts.data_u = kv.get_or<std::size_t>("n_data_u", 0);
    c.counts.data_a = kv.get_or<std::size_t>("n_data_a", 0);
    c.noise_variance = kv.get_or("noise_variance", 0.01);
    c.lambda_res = kv.get_or("lambda_res", 1.0);
    if (kv.has("lambda_bc") && kv.has("lambda_data"))
      throw std::runtime_error("config: give either lambda_bc or lambda_data, not both");
    c.lambda_bc = kv.has("lambda_data") ? kv.get_double("lambda_data") : kv.get_or("lambda_bc", 1.0);
    c.adam.beta1 = kv.get_or("beta1", 0.9);
    c.adam.beta2 = kv.get_or("beta2", 0.999);
    c.adam.eps = kv.get_or("eps", 1e-8);
    c.adam.weight_decay = kv.get_or("weight_decay", 0.0);
    c.schedule.lr_start = kv.get_or("lr_start", c.schedule.lr_start);
    c.schedule.lr_peak = kv.get_or("lr_peak", c.schedule.lr_peak);
    c.schedule.warmup_iters = kv.get_or<std::int64_t>("warmup_iters", c.schedule.warmup_iters);
    c.schedule.decay_factor = kv.get_or("decay_factor", c.schedule.decay_factor);
    c.schedule.decay_period = kv.get_or<std::int64_t>("decay_period", c.schedule.decay_period);
    c.schedule.trigger_every = kv.get_or<std::int64_t>("trigger_every", c.schedule.trigger_every);
    c.schedule.lr_floor = kv.get_or("lr_floor", c.schedule.lr_floor);
    c.iterations = kv.get_int("iterations");
    if (kv.has("seeds"))
      for (double s : kv.get_list("seeds")) {
        if (s < 0 || s != static_cast<double>(static_cast<std::uint64_t>(s)))
          throw std::runtime_error("config: seeds must be non-negative integers");
        c.seeds.push_back(static_cast<std::uint64_t>(s));
      }
    else
      c.seeds = {0};
    c.log_every = kv.get_or<std::int64_t>("log_every", 50);
    c.stepdiag_every = kv.get_or<std::int64_t>("stepdiag_every", 50);
    c.ntk_period = kv.get_or<std::int64_t>("ntk_period", 1000);
    c.dwa_temperature = kv.get_or("dwa_temperature", 2.0);
    c.eval_grid = kv.get_or<std::int64_t>("eval_grid", 300);
    c.record_wall_clock = kv.get_or("record_wall_clock", false);
    c.output_dir = kv.get_or<std::string>("output_dir", "out");
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
    KeyValueFile kv = KeyValueFile::load(path);
    for (const auto& o : overrides) kv.set(o);
    return from(kv);
  }

  /// Canonical text form of the effective configuration, keys sorted.
  std::string echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : source.raw()) os << k << " = " << v << '\n';
    return os.str();
  }
};

} // namespace autobalance
