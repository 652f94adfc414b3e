#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "decent_opt/algorithms.hpp"
#include "decent_opt/analysis.hpp"
#include "decent_opt/csv.hpp"
#include "decent_opt/problems.hpp"
#include "decent_opt/runner.hpp"
#include "decent_opt/topology.hpp"

namespace decent_opt {

inline constexpr const char* kVersion = "decent_opt 1.0.0";

struct ProblemBlock {
  std::string kind;  // quadratic | logistic | welsch | file
  std::string file;
  std::size_t n = 0;
  std::size_t d = 10;
  std::size_t p = 20;
  std::size_t m = 2000;
  double c = 1.0;
  double sigma = 0.0;
  bool normalize = false;
  double sigma_h = 0.0;
  double sigma_s = 0.0;
  double mu_reg = 0.0;
  double noise = 0.1;
  double base = 1.0;
  std::uint64_t seed = 0;
};

struct TopologyBlock {
  std::string kind = "ring";  // ring | complete | file
  std::string file;
  bool lazy = false;
};

struct AlgorithmBlock {
  std::vector<AlgorithmKind> kinds;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t T = 0;
  std::vector<std::size_t> lr_drops;
  std::string x0 = "zeros";  // zeros | gaussian | file
  std::string x0_file;
};

struct ExperimentBlock {
  std::size_t reps = 1;
  std::uint64_t seed_base = 0;
  MonitorSet monitors;
  std::string out = "out";
  bool paired_noise = true;
  bool dump_problem = false;
  std::size_t sweep_budget = 256;
  std::size_t jobs = 1;
};

// Keys that may carry a comma-separated list of values.
inline const std::vector<std::string>& sweep_keys() {
  static const std::vector<std::string> keys = {"c", "sigma_h", "alpha", "beta", "n"};
  return keys;
}

struct RunConfig {
  ProblemBlock problem;
  TopologyBlock topology;
  AlgorithmBlock algorithm;
  ExperimentBlock experiment;
  std::map<std::string, std::vector<double>> sweep;  // only keys given as lists
  std::vector<std::string> warnings;

  bool is_sweep() const { return !sweep.empty(); }
  std::size_t sweep_size() const {
    std::size_t k = 1;
    for (const auto& [key, vals] : sweep) k *= vals.size();
    return k;
  }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "' expects a boolean, got '" + v + "'");
}

inline double parse_num(const std::string& key, const std::string& v) {
  try {
    return csv::parse_double(v);
  } catch (const InvalidInput&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  const double x = parse_num(key, v);
  if (x < 0 || x != std::floor(x)) throw ConfigError("key '" + key + "' expects a nonnegative integer");
  return static_cast<std::size_t>(x);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + csv::format_short(v[i]);
  return s;
}

}  // namespace detail

// Builds the problem described by a (single-point) config.
inline std::unique_ptr<Problem> make_problem(const RunConfig& cfg) {
  const auto& p = cfg.problem;
  if (p.kind == "quadratic") {
    QuadraticParams q;
    q.n = p.n;
    q.d = p.d;
    q.p = p.p;
    q.c = p.c;
    q.sigma = p.sigma;
    q.normalize = p.normalize;
    q.seed = p.seed;
    return std::make_unique<QuadraticProblem>(gen_quadratic(q));
  }
  if (p.kind == "logistic") {
    LogisticParams l;
    l.n = p.n;
    l.d = p.d;
    l.m = p.m;
    l.sigma_h = p.sigma_h;
    l.mu_reg = p.mu_reg;
    l.sigma_s = p.sigma_s;
    l.base = p.base;
    l.seed = p.seed;
    return std::make_unique<LogisticProblem>(gen_logistic(l));
  }
  if (p.kind == "welsch") {
    WelschParams w;
    w.n = p.n;
    w.d = p.d;
    w.m = p.m;
    w.sigma_h = p.sigma_h;
    w.noise = p.noise;
    w.sigma_s = p.sigma_s;
    w.seed = p.seed;
    return std::make_unique<WelschProblem>(gen_welsch(w));
  }
  if (p.kind == "file") return load_problem(std::filesystem::path(p.file));
  throw ConfigError("unknown problem kind '" + p.kind + "'");
}

inline MixingMatrix make_topology(const RunConfig& cfg, std::size_t n) {
  const auto& t = cfg.topology;
  MixingMatrix w = t.kind == "ring"       ? build_ring(n)
                   : t.kind == "complete" ? build_complete(n)
                   : t.kind == "file"     ? load_mixing_matrix(t.file)
                                          : throw ConfigError("unknown topology '" + t.kind + "'");
  if (w.n() != n)
    throw ConfigError("topology has " + std::to_string(w.n()) + " agents but problem has " +
                      std::to_string(n));
  return t.lazy ? lazy_transform(w) : w;
}

inline Vector make_x0(const RunConfig& cfg, std::size_t d) {
  const auto D = static_cast<Eigen::Index>(d);
  const auto& a = cfg.algorithm;
  if (a.x0 == "zeros") return Vector::Zero(D);
  if (a.x0 == "gaussian") {
    RngStream rng(cfg.problem.seed, StreamTag::kInitialPoint);
    return detail::gaussian_vector(D, rng);
  }
  if (a.x0 == "file") {
    const Matrix m = csv::read_matrix_file(a.x0_file);
    if (m.size() != D) throw ConfigError("x0 file must hold exactly d values");
    return Eigen::Map<const Vector>(m.data(), D);
  }
  throw ConfigError("x0 must be zeros, gaussian or file");
}

inline std::string effective_config(const RunConfig& cfg) {
  std::ostringstream os;
  const auto& p = cfg.problem;
  const auto& t = cfg.topology;
  const auto& a = cfg.algorithm;
  const auto& e = cfg.experiment;
  auto list_or = [&](const std::string& key, const std::string& scalar) {
    auto it = cfg.sweep.find(key);
    return it == cfg.sweep.end() ? scalar : detail::format_list(it->second);
  };
  os << "# effective configuration (" << kVersion << ")\n";
  os << "problem = " << p.kind << "\n";
  if (!p.file.empty()) os << "problem_file = " << p.file << "\n";
  os << "n = " << list_or("n", std::to_string(p.n)) << "\n";
  os << "d = " << p.d << "\n";
  os << "p = " << p.p << "\n";
  os << "m = " << p.m << "\n";
  os << "c = " << list_or("c", csv::format_short(p.c)) << "\n";
  os << "sigma = " << csv::format_short(p.sigma) << "\n";
  os << "normalize = " << (p.normalize ? "true" : "false") << "\n";
  os << "sigma_h = " << list_or("sigma_h", csv::format_short(p.sigma_h)) << "\n";
  os << "sigma_s = " << csv::format_short(p.sigma_s) << "\n";
  os << "mu_reg = " << csv::format_short(p.mu_reg) << "\n";
  os << "noise = " << csv::format_short(p.noise) << "\n";
  os << "base = " << csv::format_short(p.base) << "\n";
  os << "problem_seed = " << p.seed << "\n";
  os << "topology = " << t.kind << "\n";
  if (!t.file.empty()) os << "topology_file = " << t.file << "\n";
  os << "lazy = " << (t.lazy ? "true" : "false") << "\n";
  os << "algorithm = ";
  for (std::size_t i = 0; i < a.kinds.size(); ++i) os << (i ? ", " : "") << to_string(a.kinds[i]);
  os << "\n";
  os << "alpha = " << list_or("alpha", csv::format_short(a.alpha)) << "\n";
  os << "beta = " << list_or("beta", csv::format_short(a.beta)) << "\n";
  os << "T = " << a.T << "\n";
  os << "lr_drop = ";
  for (std::size_t i = 0; i < a.lr_drops.size(); ++i) os << (i ? ", " : "") << a.lr_drops[i];
  os << "\n";
  os << "x0 = " << a.x0 << "\n";
  if (!a.x0_file.empty()) os << "x0_file = " << a.x0_file << "\n";
  os << "reps = " << e.reps << "\n";
  os << "seed = " << e.seed_base << "\n";
  std::string mons;
  if (e.monitors.lemmas) mons += "lemmas";
  if (e.monitors.shadow) mons += std::string(mons.empty() ? "" : ", ") + "shadow";
  os << "monitors = " << (mons.empty() ? "none" : mons) << "\n";
  os << "shadow_variant = " << (e.monitors.variant == ShadowVariant::kPl ? "pl" : "nonconvex") << "\n";
  os << "paired_noise = " << (e.paired_noise ? "true" : "false") << "\n";
  os << "dump_problem = " << (e.dump_problem ? "true" : "false") << "\n";
  os << "sweep_budget = " << e.sweep_budget << "\n";
  os << "out = " << e.out << "\n";
  return os.str();
}

// Rewrites relative paths against `base`.
inline void resolve_paths(RunConfig& cfg, const std::filesystem::path& base) {
  auto fix = [&](std::string& s) {
    if (!s.empty() && std::filesystem::path(s).is_relative()) s = (base / s).lexically_normal().string();
  };
  fix(cfg.problem.file);
  fix(cfg.topology.file);
  fix(cfg.algorithm.x0_file);
}

// Step-size admissibility warnings against both theorems. Builds the instance.
inline std::vector<std::string> admissibility_warnings(const RunConfig& cfg) {
  std::vector<std::string> out;
  const auto problem = make_problem(cfg);
  const auto w = make_topology(cfg, problem->n());
  const double lambda = w.profile().lambda;
  const double L = problem->smoothness();
  for (auto kind : cfg.algorithm.kinds) {
    const double beta = uses_momentum(kind) ? cfg.algorithm.beta : 0.0;
    const double a1 = max_step_size(beta, lambda, L, Regime::kNonconvex);
    if (cfg.algorithm.alpha > a1)
      out.push_back("warning: alpha=" + csv::format_short(cfg.algorithm.alpha) + " exceeds the non-convex admissible bound " +
                    csv::format_double(a1) + " for " + to_string(kind));
    if (problem->strong_convexity() > 0.0) {
      const double a2 = max_step_size(beta, lambda, L, Regime::kPl);
      if (cfg.algorithm.alpha > a2)
        out.push_back("warning: alpha=" + csv::format_short(cfg.algorithm.alpha) + " exceeds the PL admissible bound " +
                      csv::format_double(a2) + " (alpha*L reading; literal reading " +
                      csv::format_double(max_step_size_literal_pl(beta, lambda)) + ") for " + to_string(kind));
    }
  }
  return out;
}

// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline RunConfig parse_config_text(const std::string& text) {
  static const std::set<std::string> known = {
      "problem", "problem_file", "n", "d", "p", "m", "c", "sigma", "normalize", "sigma_h",
      "sigma_s", "mu_reg", "noise", "base", "problem_seed", "topology", "topology_file", "lazy",
      "algorithm", "alpha", "beta", "T", "lr_drop", "x0", "x0_file", "reps", "seed",
      "seed_base", "monitors", "shadow_variant", "out", "paired_noise", "dump_problem",
      "sweep_budget", "jobs"};
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto t = csv::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = csv::trim(t.substr(0, eq));
    const auto val = csv::trim(t.substr(eq + 1));
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "'");
    if (kv.count(key)) throw ConfigError("duplicate key '" + key + "'");
    kv[key] = val;
  }

  RunConfig cfg;
  auto has = [&](const std::string& k) { return kv.count(k) > 0; };
  auto require = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("missing required key '" + k + "'");
    return it->second;
  };
  auto list = [&](const std::string& k) {
    std::vector<double> vals;
    for (const auto& tok : csv::split(kv.at(k), ',')) vals.push_back(detail::parse_num(k, tok));
    if (vals.size() > 1) cfg.sweep[k] = vals;
    return vals.front();
  };

  auto& p = cfg.problem;
  p.kind = require("problem");
  if (p.kind != "quadratic" && p.kind != "logistic" && p.kind != "welsch" && p.kind != "file")
    throw ConfigError("unsupported problem '" + p.kind + "'; supported: quadratic, logistic, welsch, file");
  if (p.kind == "file") {
    p.file = require("problem_file");
  } else {
    if (p.kind == "welsch") {
      p.d = 5;
      p.m = 50;
      p.sigma_h = 0.5;
    }
    if (p.kind == "logistic") p.d = 20;
    p.n = static_cast<std::size_t>(has("n") ? list("n") : detail::parse_num("n", require("n")));
  }
  if (has("d")) p.d = detail::parse_count("d", kv["d"]);
  if (has("p")) p.p = detail::parse_count("p", kv["p"]);
  if (has("m")) p.m = detail::parse_count("m", kv["m"]);
  if (has("c")) p.c = list("c");
  if (has("sigma")) p.sigma = detail::parse_num("sigma", kv["sigma"]);
  if (has("normalize")) p.normalize = detail::parse_bool("normalize", kv["normalize"]);
  if (has("sigma_h")) p.sigma_h = list("sigma_h");
  if (has("sigma_s")) p.sigma_s = detail::parse_num("sigma_s", kv["sigma_s"]);
  if (p.kind == "logistic") p.mu_reg = detail::parse_num("mu_reg", require("mu_reg"));
  else if (has("mu_reg")) p.mu_reg = detail::parse_num("mu_reg", kv["mu_reg"]);
  if (has("noise")) p.noise = detail::parse_num("noise", kv["noise"]);
  if (has("base")) p.base = detail::parse_num("base", kv["base"]);
  if (has("problem_seed")) p.seed = detail::parse_u64("problem_seed", kv["problem_seed"]);

  auto& t = cfg.topology;
  if (has("topology")) t.kind = kv["topology"];
  if (t.kind != "ring" && t.kind != "complete" && t.kind != "file")
    throw ConfigError("unsupported topology '" + t.kind + "'; supported: ring, complete, file");
  if (t.kind == "file") t.file = require("topology_file");
  if (has("lazy")) t.lazy = detail::parse_bool("lazy", kv["lazy"]);

  auto& a = cfg.algorithm;
  for (const auto& tok : csv::split(require("algorithm"), ',')) a.kinds.push_back(parse_algorithm(tok));
  a.alpha = has("alpha") ? list("alpha") : detail::parse_num("alpha", require("alpha"));
  if (has("beta")) a.beta = list("beta");
  a.T = detail::parse_count("T", require("T"));
  if (a.T < 1) throw ConfigError("T must be >= 1");
  if (has("lr_drop") && !kv["lr_drop"].empty())
    for (const auto& tok : csv::split(kv["lr_drop"], ',')) a.lr_drops.push_back(detail::parse_count("lr_drop", tok));
  if (has("x0")) a.x0 = kv["x0"];
  if (a.x0 != "zeros" && a.x0 != "gaussian" && a.x0 != "file")
    throw ConfigError("x0 must be zeros, gaussian or file");
  if (a.x0 == "file") a.x0_file = require("x0_file");
  for (const auto& [key, vals] : cfg.sweep)
    for (double v : vals) {
      if ((key == "alpha" && !(v > 0)) || (key == "beta" && !(v >= 0 && v < 1)) ||
          (key == "c" && !(v > 0)) || (key == "sigma_h" && v < 0) || (key == "n" && (v < 1 || v != std::floor(v))))
        throw ConfigError("invalid value " + csv::format_double(v) + " in sweep list '" + key + "'");
    }
  if (!(a.alpha > 0)) throw ConfigError("alpha must be positive");
  if (!(a.beta >= 0 && a.beta < 1)) throw ConfigError("beta must lie in [0, 1)");

  auto& e = cfg.experiment;
  if (has("reps")) e.reps = detail::parse_count("reps", kv["reps"]);
  if (e.reps < 1) throw ConfigError("reps must be >= 1");
  if (has("seed") && has("seed_base")) throw ConfigError("give either seed or seed_base, not both");
  if (has("seed")) e.seed_base = detail::parse_u64("seed", kv["seed"]);
  if (has("seed_base")) e.seed_base = detail::parse_u64("seed_base", kv["seed_base"]);
  if (has("monitors")) {
    for (const auto& tok : csv::split(kv["monitors"], ',')) {
      if (tok == "lemmas") e.monitors.lemmas = true;
      else if (tok == "shadow") e.monitors.shadow = true;
      else if (tok == "all") e.monitors.lemmas = e.monitors.shadow = true;
      else if (tok != "none") throw ConfigError("monitors must be none, lemmas, shadow or all");
    }
  }
  if (has("shadow_variant")) {
    const auto& v = kv["shadow_variant"];
    if (v == "pl") e.monitors.variant = ShadowVariant::kPl;
    else if (v != "nonconvex") throw ConfigError("shadow_variant must be nonconvex or pl");
  }
  if (has("out")) e.out = kv["out"];
  if (has("paired_noise")) e.paired_noise = detail::parse_bool("paired_noise", kv["paired_noise"]);
  if (has("dump_problem")) e.dump_problem = detail::parse_bool("dump_problem", kv["dump_problem"]);
  if (has("sweep_budget")) e.sweep_budget = detail::parse_count("sweep_budget", kv["sweep_budget"]);
  if (has("jobs")) e.jobs = std::max<std::size_t>(1, detail::parse_count("jobs", kv["jobs"]));
  return cfg;
}

inline void check_paths(const RunConfig& cfg) {
  for (const auto& f : {cfg.problem.file, cfg.topology.file, cfg.algorithm.x0_file})
    if (!f.empty() && !std::filesystem::exists(f)) throw ConfigError("file not found: " + f);
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config_text(ss.str());
  resolve_paths(cfg, path.parent_path());
  check_paths(cfg);
  return cfg;
}

// Cartesian product of the sweep lists, in the fixed key order c, sigma_h,
// alpha, beta, n (last key varies fastest).
inline std::vector<RunConfig> expand_sweep(const RunConfig& cfg) {
  if (cfg.sweep_size() > cfg.experiment.sweep_budget)
    throw ConfigError("sweep has " + std::to_string(cfg.sweep_size()) + " points, budget is " +
                      std::to_string(cfg.experiment.sweep_budget));
  std::vector<RunConfig> points{cfg};
  points.front().sweep.clear();
  for (const auto& key : sweep_keys()) {
    auto it = cfg.sweep.find(key);
    if (it == cfg.sweep.end()) continue;
    std::vector<RunConfig> next;
    for (const auto& base : points)
      for (double v : it->second) {
        RunConfig c = base;
        if (key == "c") c.problem.c = v;
        else if (key == "sigma_h") c.problem.sigma_h = v;
        else if (key == "alpha") c.algorithm.alpha = v;
        else if (key == "beta") c.algorithm.beta = v;
        else if (key == "n") c.problem.n = static_cast<std::size_t>(v);
        next.push_back(std::move(c));
      }
    points = std::move(next);
  }
  return points;
}

// ---------------------------------------------------------------------------

inline constexpr std::size_t kMetricCount = 6;

inline const std::array<double MetricRow::*, kMetricCount>& metric_fields() {
  static const std::array<double MetricRow::*, kMetricCount> f = {
      &MetricRow::consensus_dev, &MetricRow::grad_avg_sq, &MetricRow::grad_bar_sq,
      &MetricRow::subopt,        &MetricRow::dist_sq,     &MetricRow::m_bar_sq};
  return f;
}

inline const std::array<const char*, kMetricCount>& metric_names() {
  static const std::array<const char*, kMetricCount> n = {
      "consensus_dev", "grad_avg_sq", "grad_bar_sq", "subopt", "dist_sq", "m_bar_sq"};
  return n;
}

struct AggregateSeries {
  AlgorithmKind kind = AlgorithmKind::kEdm;
  std::size_t ok_reps = 0;
  std::vector<std::size_t> failed_reps;
  std::vector<std::string> failures;
  // [field][t]; t runs over 1..T
  std::array<std::vector<double>, kMetricCount> mean, std, min, max;

  double final_mean(std::size_t field) const {
    return mean[field].empty() ? std::numeric_limits<double>::quiet_NaN() : mean[field].back();
  }
  // Mean over the last `window` iterations of a mean curve.
  double tail_mean(std::size_t field, std::size_t window) const {
    const auto& v = mean[field];
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    window = std::min(window, v.size());
    double s = 0.0;
    for (std::size_t k = v.size() - window; k < v.size(); ++k) s += v[k];
    return s / static_cast<double>(window);
  }
};

struct BoundReport {
  double lambda = 0.0, L = 0.0, mu = 0.0, sigma_sq = 0.0, zeta_sq = 0.0, zeta0_sq = 0.0, f0_gap = 0.0;
  std::vector<std::pair<AlgorithmKind, double>> theorem1;        // edm/ed2 only
  std::vector<std::pair<AlgorithmKind, double>> theorem2_final;  // at t = T, mu > 0
  std::vector<std::pair<AlgorithmKind, double>> theorem2_floor;
};

struct AggregateReport {
  RunConfig config;
  std::size_t T = 0;
  std::vector<AggregateSeries> series;  // one per configured algorithm
  BoundReport bounds;
  std::filesystem::path out_dir;

  bool all_ok() const {
    return std::all_of(series.begin(), series.end(),
                       [](const auto& s) { return s.failed_reps.empty(); });
  }
  const AggregateSeries& of(AlgorithmKind k) const {
    for (const auto& s : series)
      if (s.kind == k) return s;
    throw InvalidInput("algorithm not in report: " + to_string(k));
  }
};

inline AggregateSeries aggregate(AlgorithmKind kind, const std::vector<const Trace*>& traces, std::size_t T) {
  AggregateSeries a;
  a.kind = kind;
  a.ok_reps = traces.size();
  if (traces.empty()) return a;
  const auto& fields = metric_fields();
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    a.mean[f].assign(T, 0.0);
    a.std[f].assign(T, 0.0);
    a.min[f].assign(T, std::numeric_limits<double>::infinity());
    a.max[f].assign(T, -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (const auto* tr : traces) {
        const double v = tr->rows[t].metrics.*fields[f];
        s += v;
        a.min[f][t] = std::min(a.min[f][t], v);
        a.max[f][t] = std::max(a.max[f][t], v);
      }
      const double mean = s / static_cast<double>(traces.size());
      double ss = 0.0;
      for (const auto* tr : traces) {
        const double dv = tr->rows[t].metrics.*fields[f] - mean;
        ss += dv * dv;
      }
      a.mean[f][t] = mean;
      a.std[f][t] = std::sqrt(ss / static_cast<double>(traces.size()));
    }
  }
  return a;
}

inline std::string aggregate_to_csv(const AggregateSeries& a) {
  std::ostringstream os;
  os << "t";
  for (const auto* name : metric_names())
    os << ',' << name << "_mean," << name << "_std," << name << "_min," << name << "_max";
  os << '\n';
  const std::size_t T = a.mean[0].size();
  for (std::size_t t = 0; t < T; ++t) {
    os << t + 1;
    for (std::size_t f = 0; f < kMetricCount; ++f)
      for (const auto* col : {&a.mean, &a.std, &a.min, &a.max}) os << ',' << csv::format_double((*col)[f][t]);
    os << '\n';
  }
  return os.str();
}

// Runs fn(0..count-1) on a bounded pool. Results must be written to
// per-index slots; order of execution never affects them.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  for (std::size_t k = 0; k < jobs; ++k)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
}

inline std::uint64_t rep_seed(const RunConfig& cfg, std::size_t rep, std::size_t algo_index) {
  const std::uint64_t base = cfg.experiment.seed_base + rep;
  return cfg.experiment.paired_noise ? base : splitmix64(base ^ splitmix64(algo_index + 1));
}

struct ExperimentOptions {
  bool write_outputs = true;
  std::size_t jobs = 1;
};

// Runs every configured algorithm for every rep and aggregates the traces.
// A diverging (algorithm, rep) cell is recorded as failed; the others proceed.
inline AggregateReport run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                      const ExperimentOptions& opts = {}) {
  if (cfg.is_sweep()) throw ConfigError("config has sweep lists; use sweep");
  const auto problem = make_problem(cfg);
  const auto w = make_topology(cfg, problem->n());
  const Vector x0 = make_x0(cfg, problem->d());
  const std::size_t T = cfg.algorithm.T;
  const std::size_t reps = cfg.experiment.reps;
  const auto& kinds = cfg.algorithm.kinds;
  problem->reference();  // solve once before fanning out

  if (opts.write_outputs) std::filesystem::create_directories(out_dir);

  std::vector<Trace> traces(kinds.size() * reps);
  std::vector<std::string> errors(traces.size());
  parallel_for(traces.size(), opts.jobs, [&](std::size_t job) {
    const std::size_t ai = job / reps;
    const std::size_t rep = job % reps;
    AlgorithmSpec spec;
    spec.kind = kinds[ai];
    spec.alpha = cfg.algorithm.alpha;
    spec.beta = cfg.algorithm.beta;
    spec.lr_drops = cfg.algorithm.lr_drops;
    MonitorSet mon = cfg.experiment.monitors;
    const bool two_step = spec.kind == AlgorithmKind::kEdm || spec.kind == AlgorithmKind::kEd2;
    if (!two_step || (mon.lemmas && problem->noise_variance_bound() > 0.0)) mon.lemmas = false;
    if (!two_step) mon.shadow = false;
    try {
      traces[job] = run(spec, *problem, w, T, x0, rep_seed(cfg, rep, ai), mon);
      if (opts.write_outputs)
        csv::write_file_atomic(out_dir / ("trace_" + to_string(spec.kind) + "_rep" + std::to_string(rep) + ".csv"),
                               trace_to_csv(traces[job]));
    } catch (const std::exception& e) {
      errors[job] = e.what();
    }
  });

  AggregateReport report;
  report.config = cfg;
  report.T = T;
  report.out_dir = out_dir;
  for (std::size_t ai = 0; ai < kinds.size(); ++ai) {
    std::vector<const Trace*> ok;
    std::vector<std::size_t> failed;
    std::vector<std::string> why;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const auto& tr = traces[ai * reps + rep];
      const auto& err = errors[ai * reps + rep];
      if (!err.empty()) {
        failed.push_back(rep);
        why.push_back(err);
      } else if (!tr.ok()) {
        failed.push_back(rep);
        why.push_back(tr.divergence->what());
      } else {
        ok.push_back(&tr);
      }
    }
    auto series = aggregate(kinds[ai], ok, T);
    series.failed_reps = std::move(failed);
    series.failures = std::move(why);
    report.series.push_back(std::move(series));
  }

  auto& b = report.bounds;
  const auto k = constants(*problem);
  b.lambda = w.profile().lambda;
  b.L = k.L;
  b.mu = k.mu;
  b.sigma_sq = k.sigma_sq;
  b.zeta_sq = k.zeta_sq;
  b.zeta0_sq = zeta0_sq(w, *problem, x0.transpose().replicate(static_cast<Eigen::Index>(problem->n()), 1));
  b.f0_gap = problem->value(x0) - k.f_star;
  if (b.lambda < 1.0) {
    for (auto kind : kinds) {
      if (kind != AlgorithmKind::kEdm && kind != AlgorithmKind::kEd2) continue;
      BoundInputs in{cfg.algorithm.alpha, kind == AlgorithmKind::kEdm ? cfg.algorithm.beta : 0.0,
                     b.lambda, b.L, b.mu, b.sigma_sq, b.zeta0_sq, static_cast<double>(problem->n()),
                     static_cast<double>(T), std::max(0.0, b.f0_gap)};
      b.theorem1.emplace_back(kind, theorem1_bound(in));
      if (b.mu > 0.0 && problem->has_exact_optimum()) {
        b.theorem2_final.emplace_back(kind, theorem2_bound(in, static_cast<double>(T)));
        b.theorem2_floor.emplace_back(kind, theorem2_floor(in));
      }
    }
  }

  if (opts.write_outputs) {
    std::ostringstream prov;
    prov << effective_config(cfg);
    prov << "# version = " << kVersion << "\n# seeds =";
    for (std::size_t ai = 0; ai < kinds.size(); ++ai)
      for (std::size_t rep = 0; rep < reps; ++rep)
        prov << ' ' << to_string(kinds[ai]) << ':' << rep_seed(cfg, rep, ai);
    prov << "\n";
    for (const auto& wmsg : cfg.warnings) prov << "# " << wmsg << "\n";
    csv::write_file_atomic(out_dir / "effective_config.txt", prov.str());
    for (const auto& s : report.series)
      csv::write_file_atomic(out_dir / ("aggregate_" + to_string(s.kind) + ".csv"), aggregate_to_csv(s));

    std::ostringstream sum;
    sum << "algorithm,ok_reps,failed_reps";
    for (const auto* name : metric_names()) sum << ",final_" << name << "_mean";
    sum << ",theorem1_bound,theorem2_bound_T,theorem2_floor\n";
    auto lookup = [](const auto& v, AlgorithmKind k) {
      for (const auto& [kind, val] : v)
        if (kind == k) return val;
      return std::numeric_limits<double>::quiet_NaN();
    };
    for (const auto& s : report.series) {
      sum << to_string(s.kind) << ',' << s.ok_reps << ',' << s.failed_reps.size();
      for (std::size_t f = 0; f < kMetricCount; ++f) sum << ',' << csv::format_double(s.final_mean(f));
      sum << ',' << csv::format_double(lookup(b.theorem1, s.kind)) << ','
          << csv::format_double(lookup(b.theorem2_final, s.kind)) << ','
          << csv::format_double(lookup(b.theorem2_floor, s.kind)) << '\n';
    }
    csv::write_file_atomic(out_dir / "summary.csv", sum.str());

    std::ostringstream consts;
    consts << "lambda=" << csv::format_double(b.lambda) << "\nL=" << csv::format_double(b.L)
           << "\nmu=" << csv::format_double(b.mu) << "\nsigma_sq=" << csv::format_double(b.sigma_sq)
           << "\nzeta_sq=" << csv::format_double(b.zeta_sq) << "\nzeta0_sq=" << csv::format_double(b.zeta0_sq)
           << "\nf0_gap=" << csv::format_double(b.f0_gap) << "\nreference=" << k.reference << "\n";
    csv::write_file_atomic(out_dir / "constants.txt", consts.str());

    std::ostringstream fails;
    for (const auto& s : report.series)
      for (std::size_t i = 0; i < s.failed_reps.size(); ++i)
        fails << to_string(s.kind) << ",rep" << s.failed_reps[i] << "," << s.failures[i] << "\n";
    if (!fails.str().empty()) csv::write_file_atomic(out_dir / "failures.txt", fails.str());

    if (cfg.experiment.dump_problem) {
      std::ostringstream dump;
      problem->dump(dump);
      csv::write_file_atomic(out_dir / "problem.txt", dump.str());
    }
  }
  return report;
}

// One AggregateReport per sweep point, written to out_dir/point_<k>, plus an
// index CSV mapping points to directories.
inline std::vector<AggregateReport> sweep(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                          const ExperimentOptions& opts = {}) {
  const auto points = expand_sweep(cfg);  // checks the budget before any run
  if (!cfg.is_sweep()) return {run_experiment(points.front(), out_dir, opts)};
  std::vector<AggregateReport> reports;
  std::ostringstream index;
  index << "point,c,sigma_h,alpha,beta,n,dir\n";
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto dir = out_dir / ("point_" + std::to_string(k));
    reports.push_back(run_experiment(points[k], dir, opts));
    const auto& p = points[k];
    index << k << ',' << csv::format_double(p.problem.c) << ',' << csv::format_double(p.problem.sigma_h) << ','
          << csv::format_double(p.algorithm.alpha) << ',' << csv::format_double(p.algorithm.beta) << ','
          << p.problem.n << ",point_" << k << '\n';
  }
  if (opts.write_outputs) {
    std::filesystem::create_directories(out_dir);
    csv::write_file_atomic(out_dir / "index.csv", index.str());
    csv::write_file_atomic(out_dir / "effective_config.txt", effective_config(cfg));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// verify: one line `check=<name> status=pass|fail detail=<float>` per check.

struct CheckLine {
  std::string name;
  bool pass = false;
  double detail = 0.0;
  std::string to_text() const {
    return "check=" + name + " status=" + (pass ? "pass" : "fail") + " detail=" + csv::format_double(detail);
  }
};

inline std::vector<CheckLine> verify(const RunConfig& cfg, const std::string& check) {
  static const std::set<std::string> names = {"lemma1", "lemma2", "lemma3", "lemma5", "shadow", "bounds"};
  if (!names.count(check))
    throw ConfigError("unknown check '" + check + "'; expected lemma1|lemma2|lemma3|lemma5|shadow|bounds");
  if (cfg.is_sweep()) throw ConfigError("verify takes a single-point config");
  const auto problem = make_problem(cfg);
  const auto w = make_topology(cfg, problem->n());
  const Vector x0 = make_x0(cfg, problem->d());
  const std::size_t T = cfg.algorithm.T;
  std::vector<CheckLine> out;

  for (std::size_t ai = 0; ai < cfg.algorithm.kinds.size(); ++ai) {
    AlgorithmSpec spec;
    spec.kind = cfg.algorithm.kinds[ai];
    spec.alpha = cfg.algorithm.alpha;
    spec.beta = cfg.algorithm.beta;
    spec.lr_drops = cfg.algorithm.lr_drops;
    const bool two_step = spec.kind == AlgorithmKind::kEdm || spec.kind == AlgorithmKind::kEd2;
    const std::string label = check + ":" + to_string(spec.kind);
    if (!two_step) continue;

    if (check == "lemma1" || check == "lemma2" || check == "lemma5") {
      if (check == "lemma2" && !(problem->strong_convexity() > 0.0))
        throw UnsupportedRegime("lemma2 needs a PL constant mu > 0");
      MonitorSet mon;
      mon.lemmas = true;
      for (std::size_t rep = 0; rep < cfg.experiment.reps; ++rep) {
        const auto tr = run(spec, *problem, w, T, x0, rep_seed(cfg, rep, ai), mon);
        if (!tr.ok()) throw *tr.divergence;
        const double margin = check == "lemma1"   ? tr.min_lemma1_margin
                              : check == "lemma2" ? tr.min_lemma2_margin
                                                  : tr.min_lemma5_margin;
        out.push_back({label, margin >= -kMonitorTol, margin});
      }
    } else if (check == "lemma3") {
      const auto res = lemma3_estimate(spec, *problem, w, T, cfg.experiment.reps, cfg.experiment.seed_base, x0);
      out.push_back({label, res.pass, res.max_ratio});
    } else if (check == "shadow") {
      MonitorSet mon;
      mon.shadow = true;
      mon.shadow_cross_check = true;
      mon.variant = cfg.experiment.monitors.variant;
      const auto tr = run(spec, *problem, w, T, x0, rep_seed(cfg, 0, ai), mon);
      if (!tr.ok()) throw *tr.divergence;
      out.push_back({label + ":representation", tr.max_representation_gap <= 1e-8, tr.max_representation_gap});
      if (problem->noise_variance_bound() == 0.0)
        out.push_back({label + ":collapse", tr.max_shadow_collapse <= 1e-9, tr.max_shadow_collapse});
    } else if (check == "bounds") {
      const auto k = constants(*problem);
      const Matrix X0 = x0.transpose().replicate(static_cast<Eigen::Index>(problem->n()), 1);
      BoundInputs in{spec.alpha, spec.effective_beta(), w.profile().lambda, k.L, k.mu, k.sigma_sq,
                     zeta0_sq(w, *problem, X0), static_cast<double>(problem->n()), static_cast<double>(T),
                     std::max(0.0, problem->value(x0) - k.f_star)};
      double lhs = 0.0;
      double final_subopt = 0.0;
      for (std::size_t rep = 0; rep < cfg.experiment.reps; ++rep) {
        const auto tr = run(spec, *problem, w, T, x0, rep_seed(cfg, rep, ai));
        if (!tr.ok()) throw *tr.divergence;
        lhs += theorem1_lhs(tr);
        final_subopt += tr.rows.back().metrics.subopt;
      }
      lhs /= static_cast<double>(cfg.experiment.reps);
      final_subopt /= static_cast<double>(cfg.experiment.reps);
      const double b1 = theorem1_bound(in);
      out.push_back({label + ":theorem1", lhs <= b1, lhs / b1});
      if (k.mu > 0.0 && k.f_star_exact) {
        const double b2 = theorem2_bound(in, static_cast<double>(T));
        out.push_back({label + ":theorem2", final_subopt <= b2, final_subopt / b2});
      }
    }
  }
  if (out.empty()) throw ConfigError("verify checks apply to edm or ed2; none configured");
  return out;
}

}  // namespace decent_opt
