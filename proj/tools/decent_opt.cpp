#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "decent_opt/harness.hpp"

namespace {

using namespace decent_opt;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitFailure = 2;

std::size_t resolve_jobs(std::size_t flag) {
  if (const char* env = std::getenv("DECENT_OPT_JOBS")) {
    try {
      const auto v = std::stoul(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("DECENT_OPT_JOBS must be a positive integer, got '") + env + "'");
  }
  return std::max<std::size_t>(1, flag);
}

RunConfig load(const std::string& path) {
  RunConfig cfg = parse_config(path);
  cfg.warnings = admissibility_warnings(expand_sweep(cfg).front());
  for (const auto& w : cfg.warnings) std::cerr << w << "\n";
  return cfg;
}

int report_failures(const AggregateReport& r) {
  int code = kExitOk;
  for (const auto& s : r.series) {
    for (std::size_t i = 0; i < s.failed_reps.size(); ++i) {
      std::cerr << "failed: " << to_string(s.kind) << " rep " << s.failed_reps[i] << ": " << s.failures[i] << "\n";
      code = kExitFailure;
    }
  }
  return code;
}

void print_summary(const AggregateReport& r) {
  for (const auto& s : r.series) {
    std::cout << to_string(s.kind) << ": ok_reps=" << s.ok_reps << " failed_reps=" << s.failed_reps.size();
    if (s.ok_reps > 0)
      std::cout << " final_subopt=" << csv::format_double(s.final_mean(3))
                << " final_dist_sq=" << csv::format_double(s.final_mean(4))
                << " final_consensus_dev=" << csv::format_double(s.final_mean(0));
    std::cout << "\n";
  }
  std::cout << "outputs: " << r.out_dir.string() << "\n";
}

int cmd_run(const std::string& config, const std::string& out, std::size_t jobs) {
  RunConfig cfg = load(config);
  const std::string dir = out.empty() ? cfg.experiment.out : out;
  ExperimentOptions opts;
  opts.jobs = resolve_jobs(jobs ? jobs : cfg.experiment.jobs);
  if (cfg.is_sweep()) {
    int code = kExitOk;
    for (const auto& r : sweep(cfg, dir, opts)) {
      print_summary(r);
      code = std::max(code, report_failures(r));
    }
    return code;
  }
  const auto report = run_experiment(cfg, dir, opts);
  print_summary(report);
  return report_failures(report);
}

int cmd_verify(const std::string& config, const std::string& check) {
  const RunConfig cfg = load(config);
  int code = kExitOk;
  for (const auto& line : verify(cfg, check)) {
    std::cout << line.to_text() << "\n";
    if (!line.pass) code = kExitFailure;
  }
  return code;
}

int cmd_topology(const std::string& kind, std::size_t n, bool lazy, const std::string& file,
                 const std::string& out) {
  MixingMatrix w = kind == "ring"       ? build_ring(n)
                   : kind == "complete" ? build_complete(n)
                   : kind == "file"     ? (file.empty() ? throw ConfigError("--file is required for --kind file")
                                                        : load_mixing_matrix(file))
                                        : throw ConfigError("unknown topology kind '" + kind + "'");
  if (lazy) w = lazy_transform(w);
  const std::string matrix = to_csv(w);
  if (out.empty() || out == "-") {
    std::cout << matrix;
  } else {
    csv::write_file_atomic(out, matrix);
  }
  const auto report = validate(w);
  std::cout << report.to_text();
  if (w.is_symmetric()) {
    const auto& p = w.profile();
    std::cout << "lambda=" << csv::format_double(p.lambda) << "\n"
              << "min_eigenvalue=" << csv::format_double(p.min_eig) << "\n"
              << "spectral_gap=" << csv::format_double(p.spectral_gap) << "\n";
  }
  return kExitOk;
}

int cmd_bounds(const BoundInputs& in, const std::string& regime_name) {
  const Regime regime = parse_regime(regime_name);
  in.check();
  auto line = [](const std::string& k, double v) { std::cout << k << "=" << csv::format_double(v) << "\n"; };
  line("max_step_size", max_step_size(in.beta, in.lambda, in.L, regime));
  if (regime == Regime::kNonconvex) {
    line("c0", theorem1_c0(in.beta, in.lambda));
    line("theorem1_bound", theorem1_bound(in));
  } else {
    line("max_step_size_literal", max_step_size_literal_pl(in.beta, in.lambda));
    line("d1", theorem2_d1(in.beta, in.lambda));
    line("d2", theorem2_d2(in.beta, in.lambda));
    line("rho1", theorem2_rho1(in.alpha, in.mu));
    line("rho2", theorem2_rho2(in.beta, in.lambda));
    line("theorem2_floor", theorem2_floor(in));
    line("theorem2_bound", theorem2_bound(in, in.T));
  }
  if (in.alpha > max_step_size(in.beta, in.lambda, in.L, regime))
    std::cerr << "warning: alpha exceeds the admissible step size for this regime\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized stochastic optimization simulator"};
  app.set_version_flag("--version", decent_opt::kVersion);
  app.require_subcommand(1);

  std::string config, out, check, kind = "ring", file, regime = "nonconvex";
  std::size_t jobs = 0, n = 32;
  bool lazy = false;
  BoundInputs in;

  auto* run = app.add_subcommand("run", "Run an experiment (or every point of a sweep)");
  run->add_option("--config", config, "Config file")->required();
  run->add_option("--out", out, "Output directory");
  run->add_option("--jobs", jobs, "Worker threads");

  auto* sw = app.add_subcommand("sweep", "Run every point of a sweep config");
  sw->add_option("--config", config, "Config file")->required();
  sw->add_option("--out", out, "Output directory");
  sw->add_option("--jobs", jobs, "Worker threads");

  auto* ver = app.add_subcommand("verify", "Check lemma and bound inequalities on a config");
  ver->add_option("--config", config, "Config file")->required();
  ver->add_option("--check", check, "lemma1|lemma2|lemma3|lemma5|shadow|bounds")->required();

  auto* topo = app.add_subcommand("topology", "Build a mixing matrix and validate it");
  topo->add_option("--kind", kind, "ring|complete|file");
  topo->add_option("--n", n, "Number of agents");
  topo->add_flag("--lazy", lazy, "Apply (I + W)/2");
  topo->add_option("--file", file, "CSV matrix for --kind file");
  topo->add_option("--out", out, "Write the matrix CSV here instead of stdout");

  auto* bnd = app.add_subcommand("bounds", "Evaluate the closed-form convergence bounds");
  bnd->add_option("--alpha", in.alpha)->required();
  bnd->add_option("--beta", in.beta)->required();
  bnd->add_option("--lambda", in.lambda)->required();
  bnd->add_option("--L", in.L)->required();
  bnd->add_option("--mu", in.mu);
  bnd->add_option("--sigma2", in.sigma_sq);
  bnd->add_option("--zeta02", in.zeta0_sq);
  bnd->add_option("--n", in.n);
  bnd->add_option("--T", in.T);
  bnd->add_option("--f0", in.f0_gap, "f(x0) - f*");
  bnd->add_option("--regime", regime, "nonconvex|pl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, out, jobs);
    if (*sw) return cmd_run(config, out, jobs);
    if (*ver) return cmd_verify(config, check);
    if (*topo) return cmd_topology(kind, n, lazy, file, out);
    if (*bnd) return cmd_bounds(in, regime);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const DiagnosticsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
