#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "decent_opt/algorithms.hpp"
#include "decent_opt/analysis.hpp"
#include "decent_opt/csv.hpp"

namespace decent_opt {

struct MonitorSet {
  bool lemmas = false;  // descent, PL and momentum-sum monitors, sigma = 0 only
  bool shadow = false;  // track the shadow sequence and emit shadow_gap
  bool shadow_cross_check = false;
  ShadowVariant variant = ShadowVariant::kNonconvex;

  bool any() const { return lemmas || shadow; }
};

struct TraceRow {
  MetricRow metrics;
  double lemma1_residual = std::numeric_limits<double>::quiet_NaN();
  double lemma2_residual = std::numeric_limits<double>::quiet_NaN();
  double shadow_gap = std::numeric_limits<double>::quiet_NaN();  // ||P_I(X - X~)||_F^2
};

struct Trace {
  AlgorithmSpec spec;
  std::string note;
  MetricRow initial;              // t = 0, before any round
  std::vector<TraceRow> rows;     // one per executed round, t = 1..T
  std::size_t gradient_calls = 0;
  std::uint64_t noise_checksum = kChecksumSeed;
  bool monitor_columns = false;
  std::optional<DivergenceError> divergence;

  // max over t of ||xbar^(t+1) - (xbar^(t) - alpha mbar^(t))|| / (1 + ||xbar^(t)||)
  double max_average_identity_residual = 0.0;
  // min over t of residual / scale for each monitor; +inf when not evaluated
  double min_lemma1_margin = std::numeric_limits<double>::infinity();
  double min_lemma2_margin = std::numeric_limits<double>::infinity();
  double min_lemma5_margin = std::numeric_limits<double>::infinity();
  double max_representation_gap = 0.0;
  double max_momentum_gap = 0.0;
  // max over t of ||X^(t) - X~^(t)||_F / (1 + ||X^(t)||_F)
  double max_shadow_collapse = 0.0;

  bool ok() const { return !divergence.has_value(); }

  std::vector<double> column(double MetricRow::*field) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.metrics.*field);
    return out;
  }
};

using StepObserver = std::function<void(const OptimizerState& before, const StepResult& result)>;

inline std::string trace_header(bool monitor_columns) {
  std::string h = "t,consensus_dev,grad_avg_sq,grad_bar_sq,subopt,dist_sq,m_bar_sq";
  if (monitor_columns) h += ",monitor_lemma1_residual,monitor_lemma2_residual,shadow_gap";
  return h;
}

inline std::string trace_to_csv(const Trace& trace) {
  std::ostringstream os;
  os << trace_header(trace.monitor_columns) << '\n';
  for (const auto& r : trace.rows) {
    const auto& m = r.metrics;
    os << m.t;
    for (double v : {m.consensus_dev, m.grad_avg_sq, m.grad_bar_sq, m.subopt, m.dist_sq, m.m_bar_sq})
      os << ',' << csv::format_double(v);
    if (trace.monitor_columns)
      for (double v : {r.lemma1_residual, r.lemma2_residual, r.shadow_gap})
        os << ',' << csv::format_double(v);
    os << '\n';
  }
  return os.str();
}

// Executes T rounds from x0. A divergence stops the run and is recorded on the
// returned trace together with every row completed before it.
inline Trace run(const AlgorithmSpec& spec, const Problem& problem, const MixingMatrix& w,
                 std::size_t T, const Vector& x0, std::uint64_t seed,
                 const MonitorSet& monitors = {}, const StepObserver& observer = {}) {
  if (T < 1) throw InvalidInput("run requires T >= 1");
  if (w.n() != problem.n()) throw InvalidInput("mixing matrix and problem disagree on n");
  spec.check();
  const bool two_step = spec.kind == AlgorithmKind::kEdm || spec.kind == AlgorithmKind::kEd2;
  if (monitors.any()) {
    if (!two_step) throw ConfigError("monitors are defined for edm and ed2 only");
    if (!spec.lr_drops.empty()) throw ConfigError("monitors require a constant step size");
  }
  if (monitors.lemmas && problem.noise_variance_bound() > 0.0)
    throw ConfigError(
        "lemma monitors require sigma = 0: the inequalities hold in expectation, not per "
        "path; use the Monte Carlo noise-bound estimate for sigma > 0");

  Trace trace;
  trace.spec = spec;
  trace.monitor_columns = monitors.any();
  if (spec.kind == AlgorithmKind::kDsgt || spec.kind == AlgorithmKind::kDsgtHb)
    trace.note = "tracker initialized to first stochastic gradients";

  const double beta = spec.effective_beta();
  double L = 0.0, mu = 0.0, f_star = 0.0;
  if (monitors.lemmas) {
    L = problem.smoothness();
    mu = problem.strong_convexity();
    f_star = problem.has_exact_optimum() ? problem.reference().value : 0.0;
    if (!problem.has_exact_optimum()) mu = 0.0;
  }
  double lemma5_lhs = 0.0, lemma5_rhs = 0.0;

  OptimizerState state = init(spec, problem, x0);
  trace.initial = metrics(problem, state);
  std::optional<ShadowState> shadow;
  if (monitors.shadow)
    shadow = shadow_init(state.X, problem, spec.alpha, beta, monitors.variant,
                         monitors.shadow_cross_check);

  trace.rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    StepResult res;
    try {
      res = step(state, spec, w, problem, seed);
    } catch (const DivergenceError& e) {
      trace.divergence = e;
      break;
    }
    if (observer) observer(state, res);
    trace.gradient_calls += res.record.gradient_calls;
    trace.noise_checksum = fnv1a_mix(trace.noise_checksum, static_cast<double>(res.record.noise_checksum));

    TraceRow row;
    row.metrics = metrics(problem, res.state);

    if (two_step) {
      const Vector xbar = row_mean(state.X);
      const Vector predicted = xbar - spec.alpha_at(t) * row_mean(res.state.M);
      const double r = (row_mean(res.state.X) - predicted).norm() / (1.0 + xbar.norm());
      trace.max_average_identity_residual = std::max(trace.max_average_identity_residual, r);
    }
    if (monitors.lemmas) {
      const auto m = lemma_monitor_step(problem, L, mu, f_star, spec.alpha, beta, state, res.state);
      row.lemma1_residual = m.lemma1_residual();
      trace.min_lemma1_margin = std::min(trace.min_lemma1_margin, m.lemma1_residual() / m.lemma1_scale());
      if (mu > 0.0) {
        row.lemma2_residual = m.lemma2_residual();
        trace.min_lemma2_margin =
            std::min(trace.min_lemma2_margin, m.lemma2_residual() / m.lemma2_scale());
      }
      lemma5_lhs += row_mean(res.state.M).squaredNorm();
      lemma5_rhs += row_mean(res.G).squaredNorm();
      trace.min_lemma5_margin =
          std::min(trace.min_lemma5_margin, (lemma5_rhs - lemma5_lhs) / std::max(1.0, lemma5_rhs));
    }
    if (shadow) {
      shadow = shadow_step(*shadow, res.state.X, w, problem);
      row.shadow_gap = consensus_sq(res.state.X - shadow->Xt_curr);
      trace.max_shadow_collapse =
          std::max(trace.max_shadow_collapse,
                   (res.state.X - shadow->Xt_curr).norm() / (1.0 + res.state.X.norm()));
      trace.max_representation_gap = std::max(trace.max_representation_gap, shadow->representation_gap);
      trace.max_momentum_gap = std::max(trace.max_momentum_gap, shadow->momentum_gap);
    }
    trace.rows.push_back(row);
    state = std::move(res.state);
  }
  return trace;
}

// (1/T) sum_{t<T} (1/4 ||grad fbar(X^t)||^2 + ||grad f(xbar^t)||^2) along a trace.
inline double theorem1_lhs(const Trace& trace) {
  if (trace.rows.empty()) throw InvalidInput("empty trace");
  const std::size_t T = trace.rows.size();
  double s = 0.25 * trace.initial.grad_bar_sq + trace.initial.grad_avg_sq;
  for (std::size_t k = 0; k + 1 < T; ++k)
    s += 0.25 * trace.rows[k].metrics.grad_bar_sq + trace.rows[k].metrics.grad_avg_sq;
  return s / static_cast<double>(T);
}

struct Lemma3Result {
  std::vector<double> empirical;  // mean of ||P_I(X^(t) - X~^(t))||_F^2, t = 0..T
  double bound = 0.0;             // 13 a^2 lambda^2 n sigma^2 / (1 - lambda)
  bool trivial = false;           // sigma = 0: both sides vanish
  bool pass = false;
  double max_ratio = 0.0;         // max_t empirical / bound
};

// Monte Carlo estimate of the shadow noise term over `reps` seeds.
inline Lemma3Result lemma3_estimate(const AlgorithmSpec& spec, const Problem& problem,
                                    const MixingMatrix& w, std::size_t T, std::size_t reps,
                                    std::uint64_t seed_base, const Vector& x0) {
  if (spec.kind != AlgorithmKind::kEdm && spec.kind != AlgorithmKind::kEd2)
    throw ConfigError("lemma3_estimate is defined for edm and ed2");
  const double sigma_sq = problem.noise_variance_bound();
  const double lambda = w.profile().lambda;
  const double n = static_cast<double>(problem.n());
  Lemma3Result out;
  out.bound = 13.0 * spec.alpha * spec.alpha * lambda * lambda * n * sigma_sq / (1.0 - lambda);
  out.empirical.assign(T + 1, 0.0);
  if (sigma_sq == 0.0) {
    out.trivial = true;
    out.pass = true;
    return out;
  }
  if (reps < 30) throw InvalidInput("lemma3_estimate needs reps >= 30");
  MonitorSet mon;
  mon.shadow = true;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto trace = run(spec, problem, w, T, x0, seed_base + r, mon);
    if (!trace.ok()) throw *trace.divergence;
    for (std::size_t t = 0; t < T; ++t) out.empirical[t + 1] += trace.rows[t].shadow_gap;
  }
  out.pass = true;
  for (auto& v : out.empirical) {
    v /= static_cast<double>(reps);
    out.max_ratio = std::max(out.max_ratio, v / out.bound);
    if (v > out.bound) out.pass = false;
  }
  return out;
}

}  // namespace decent_opt
