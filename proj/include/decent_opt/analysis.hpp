#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "decent_opt/algorithms.hpp"
#include "decent_opt/errors.hpp"
#include "decent_opt/problems.hpp"
#include "decent_opt/topology.hpp"

namespace decent_opt {

inline Vector row_mean(const Matrix& X) { return X.colwise().mean().transpose(); }

// P_I X = X - 1 xbar^T, by row-demeaning.
inline Matrix project_consensus_out(const Matrix& X) {
  return X.rowwise() - X.colwise().mean();
}

inline double consensus_sq(const Matrix& X) { return project_consensus_out(X).squaredNorm(); }

struct MetricRow {
  std::size_t t = 0;
  double consensus_dev = 0.0;  // ||P_I X||_F^2 / n
  double grad_avg_sq = 0.0;    // ||grad f(xbar)||^2
  double grad_bar_sq = 0.0;    // ||(1/n) sum_i grad f_i(x_i)||^2
  double subopt = 0.0;         // f(xbar) - f*
  double dist_sq = 0.0;        // ||xbar - x*||^2, NaN without a known minimizer
  double m_bar_sq = 0.0;       // ||mean of latest descent direction||^2
};

inline MetricRow metrics(const Problem& problem, const OptimizerState& state) {
  MetricRow r;
  r.t = state.t;
  const auto n = static_cast<double>(state.n());
  const Vector xbar = row_mean(state.X);
  r.consensus_dev = consensus_sq(state.X) / n;
  r.grad_avg_sq = problem.gradient(xbar).squaredNorm();
  r.grad_bar_sq = row_mean(problem.stacked_gradient(state.X)).squaredNorm();
  const auto& ref = problem.reference();
  r.subopt = problem.value(xbar) - (problem.has_exact_optimum() ? ref.value : 0.0);
  r.dist_sq = problem.has_exact_optimum() ? (xbar - ref.x).squaredNorm()
                                          : std::numeric_limits<double>::quiet_NaN();
  r.m_bar_sq = row_mean(state.M).squaredNorm();
  return r;
}

// z^(t) = xbar^(t)/(1-beta) - beta xbar^(t-1)/(1-beta); z^(0) = xbar^(0) is the
// special case xbar^(-1) = xbar^(0).
inline Vector aux_z(const Vector& x_bar_t, const Vector& x_bar_prev, double beta) {
  return (x_bar_t - beta * x_bar_prev) / (1.0 - beta);
}

// (1/n) ||W P_I grad f(X0)||_F^2, squared Frobenius norm.
inline double zeta0_sq(const MixingMatrix& w, const Problem& problem, const Matrix& X0) {
  const Matrix g = problem.stacked_gradient(X0);
  return (w.weights() * project_consensus_out(g)).squaredNorm() / static_cast<double>(problem.n());
}

// ---------------------------------------------------------------------------
// Shadow sequence: the recursion of the real iterates driven by deterministic
// gradients grad f(X^(t)) of the real trajectory instead of stochastic ones.
// Two representations are advanced side by side:
//   two-step:  Xs^(t+1) = W(2 Xs^(t) - Xs^(t-1) - a Ms^(t) + a Ms^(t-1)),
//              Ms by the momentum recursion;
//   one-step:  X^(t+1) = W(X - a M) - (I-W)^{1/2} Y,  Y += (I-W)^{1/2} X^(t+1),
//              M as an explicit weighted sum over the stored gradient history.

enum class ShadowVariant { kNonconvex, kPl };

inline std::string to_string(ShadowVariant v) {
  return v == ShadowVariant::kNonconvex ? "nonconvex_N" : "pl_N";
}

struct ShadowState {
  std::size_t t = 0;
  double alpha = 0.0;
  double beta = 0.0;
  ShadowVariant variant = ShadowVariant::kNonconvex;
  bool cross_check = false;

  // two-step representation
  Matrix Xt_curr;
  Matrix Xt_prev;
  Matrix Mt;       // M~^(t)
  Matrix Mt_prev;  // M~^(t-1)

  // one-step representation (only with cross_check)
  Matrix X1;
  Matrix Yt;
  Matrix M_sum;  // M~^(t) from the explicit sum
  std::vector<Matrix> grad_history;

  Matrix Nt;  // N~^(t)
  Matrix Rt;  // R~^(t) = M~^(t) - N~^(t)

  double representation_gap = 0.0;  // ||two-step - one-step||_F
  double momentum_gap = 0.0;        // ||recursive M~ - explicit sum||_F
};

namespace detail {
inline Matrix gradient_at_mean(const Problem& problem, const Matrix& X) {
  const Matrix xbar_rows = row_mean(X).transpose().replicate(X.rows(), 1);
  return problem.stacked_gradient(xbar_rows);
}

inline Matrix explicit_momentum_sum(const std::vector<Matrix>& hist, double beta) {
  const std::size_t t = hist.size() - 1;
  Matrix acc = Matrix::Zero(hist.front().rows(), hist.front().cols());
  for (std::size_t j = 0; j <= t; ++j)
    acc += std::pow(beta, static_cast<double>(t - j)) * hist[j];
  return (1.0 - beta) * acc;
}
}  // namespace detail

// X~^(0) = X^(0), M~^(0) = (1-beta) grad f(X^(0)), M~^(-1) = 0, Y~^(0) = 0,
// N~^(0) = grad f(Xbar^(0)).
inline ShadowState shadow_init(const Matrix& X0, const Problem& problem, double alpha,
                               double beta, ShadowVariant variant, bool cross_check) {
  ShadowState s;
  s.alpha = alpha;
  s.beta = beta;
  s.variant = variant;
  s.cross_check = cross_check;
  const Matrix g0 = problem.stacked_gradient(X0);
  s.Xt_curr = X0;
  s.Xt_prev = X0;
  s.Mt = (1.0 - beta) * g0;
  s.Mt_prev = Matrix::Zero(X0.rows(), X0.cols());
  if (cross_check) {
    s.X1 = X0;
    s.Yt = Matrix::Zero(X0.rows(), X0.cols());
    s.grad_history.push_back(g0);
    s.M_sum = detail::explicit_momentum_sum(s.grad_history, beta);
  }
  s.Nt = detail::gradient_at_mean(problem, X0);
  s.Rt = s.Mt - s.Nt;
  return s;
}

// Advances the shadow from t to t+1. trajectory_next is the real X^(t+1).
inline ShadowState shadow_step(const ShadowState& s, const Matrix& trajectory_next,
                               const MixingMatrix& w, const Problem& problem) {
  const auto& W = w.weights();
  const double a = s.alpha;
  const double b = s.beta;
  ShadowState out = s;
  out.t = s.t + 1;
  out.Xt_prev = s.Xt_curr;
  out.Xt_curr = W * (2.0 * s.Xt_curr - s.Xt_prev - a * s.Mt + a * s.Mt_prev);

  const Matrix g_next = problem.stacked_gradient(trajectory_next);
  out.Mt_prev = s.Mt;
  out.Mt = b * s.Mt + (1.0 - b) * g_next;

  if (s.cross_check) {
    const Matrix& S = w.sqrt_laplacian();
    out.X1 = W * (s.X1 - a * s.M_sum) - S * s.Yt;
    out.Yt = s.Yt + S * out.X1;
    out.grad_history.push_back(g_next);
    out.M_sum = detail::explicit_momentum_sum(out.grad_history, b);
    out.representation_gap = (out.Xt_curr - out.X1).norm();
    out.momentum_gap = (out.Mt - out.M_sum).norm();
  }

  const Matrix g_mean = detail::gradient_at_mean(problem, trajectory_next);
  out.Nt = s.variant == ShadowVariant::kNonconvex ? Matrix(b * s.Nt + (1.0 - b) * g_mean) : g_mean;
  out.Rt = out.Mt - out.Nt;
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic (sigma = 0) per-step monitors. Residual = RHS - LHS; a valid
// step has residual >= -1e-9 * scale.

struct MonitorStep {
  double lemma1_lhs = 0.0, lemma1_rhs = 0.0;
  double lemma2_lhs = 0.0, lemma2_rhs = 0.0;  // NaN when mu == 0
  double lemma1_residual() const { return lemma1_rhs - lemma1_lhs; }
  double lemma2_residual() const { return lemma2_rhs - lemma2_lhs; }
  double lemma1_scale() const {
    return std::max({std::abs(lemma1_lhs), std::abs(lemma1_rhs), 1.0});
  }
  double lemma2_scale() const {
    return std::max({std::abs(lemma2_lhs), std::abs(lemma2_rhs), 1.0});
  }
};

inline constexpr double kMonitorTol = 1e-9;

// before = state at round t, after = state at t+1. grad_bar is the mean
// deterministic gradient at X^(t). Uses f~ = f - f*.
inline MonitorStep lemma_monitor_step(const Problem& problem, double L, double mu, double f_star,
                                      double alpha, double beta, const OptimizerState& before,
                                      const OptimizerState& after) {
  const double n = static_cast<double>(before.n());
  const Vector xbar_prev = row_mean(before.X_prev);
  const Vector xbar = row_mean(before.X);
  const Vector xbar_next = row_mean(after.X);
  const Vector z = aux_z(xbar, xbar_prev, beta);
  const Vector z_next = aux_z(xbar_next, xbar, beta);
  const double m_prev_sq = row_mean(before.M).squaredNorm();  // ||mbar^(t-1)||^2
  const double cons = consensus_sq(before.X);
  const double gbar_sq = row_mean(problem.stacked_gradient(before.X)).squaredNorm();
  const double gavg_sq = problem.gradient(xbar).squaredNorm();
  const double fz = problem.value(z);
  const double fz_next = problem.value(z_next);

  MonitorStep m;
  m.lemma1_lhs = fz_next;
  m.lemma1_rhs = fz + alpha * alpha * L * beta / (2.0 * (1.0 - beta)) * m_prev_sq +
                 alpha * L * L / (2.0 * n) * cons -
                 0.5 * alpha * (1.0 - beta * alpha * L / (1.0 - beta) - alpha * L) * gbar_sq -
                 0.5 * alpha * gavg_sq;
  if (mu > 0.0) {
    m.lemma2_lhs = fz_next - f_star;
    m.lemma2_rhs = (1.0 - alpha * mu) * (fz - f_star) - 0.5 * alpha * (1.0 - alpha * L) * gbar_sq +
                   alpha * L * L / (2.0 * n) * cons +
                   std::pow(alpha, 3) * L * L * beta * beta / (2.0 * (1.0 - beta) * (1.0 - beta)) *
                       m_prev_sq;
  } else {
    m.lemma2_lhs = m.lemma2_rhs = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Closed-form bounds.

struct BoundInputs {
  double alpha = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
  double L = 1.0;
  double mu = 0.0;
  double sigma_sq = 0.0;
  double zeta0_sq = 0.0;
  double n = 1.0;
  double T = 1.0;
  double f0_gap = 0.0;

  void check() const {
    for (double v : {alpha, beta, lambda, L, mu, sigma_sq, zeta0_sq, n, T, f0_gap})
      if (!(v >= 0.0)) throw InvalidInput("bound inputs must be nonnegative");
    if (!(beta < 1.0)) throw InvalidInput("beta must be < 1");
    if (!(lambda < 1.0)) throw InvalidInput("lambda must be < 1");
  }
};

inline double theorem1_c0(double beta, double lambda) {
  const double s = std::sqrt(lambda);
  return 24.0 * (1.0 - beta) * (1.0 - beta) / (1.0 + s) + 12.0 * beta * beta * lambda * (1.0 - s) +
         2.0 * beta * beta * beta * lambda / (1.0 - beta);
}

// Upper bound on (1/T) sum_t (1/4 E||grad fbar(X^t)||^2 + E||grad f(xbar^t)||^2).
inline double theorem1_bound(const BoundInputs& in) {
  in.check();
  const double s = std::sqrt(in.lambda);
  const double a = in.alpha;
  const double L = in.L;
  return 2.0 * in.f0_gap / (a * in.T) + 2.0 * a * L * in.sigma_sq / in.n +
         52.0 * a * a * L * L * in.lambda * in.lambda * in.sigma_sq / (1.0 - in.lambda) +
         8.0 * theorem1_c0(in.beta, in.lambda) * a * a * L * L * in.zeta0_sq /
             ((1.0 - s) * (1.0 - s) * in.T);
}

inline double theorem2_d1(double beta, double lambda) {
  const double s = std::sqrt(lambda);
  return 50.0 * lambda * beta * beta / (3.0 * (1.0 - beta)) +
         320.0 * (1.0 - beta) * (1.0 - beta) / (3.0 * (1.0 + s)) +
         160.0 / 3.0 * lambda * beta * beta * (1.0 - s);
}

inline double theorem2_d2(double beta, double lambda) {
  return 100.0 / 3.0 *
         (5.0 * lambda * beta * beta / (3.0 * (1.0 - beta)) + 4.0 * (1.0 - beta) * (1.0 - beta) +
          2.0 * lambda * beta * beta * (1.0 - lambda));
}

inline double theorem2_rho1(double alpha, double mu) { return 1.0 - alpha * mu; }

inline double theorem2_rho2(double beta, double lambda) {
  return 1.0 - std::min((1.0 - std::sqrt(lambda)) / 5.0, 2.0 * (1.0 - beta) / 5.0);
}

// Asymptotic neighborhood 6 a L s^2/(n mu) + 169 a^2 L^2 lambda^2 s^2/(mu (1-lambda)).
inline double theorem2_floor(const BoundInputs& in) {
  if (!(in.mu > 0.0)) throw UnsupportedRegime("theorem2 bound requires mu > 0");
  const double a = in.alpha;
  const double L = in.L;
  return 6.0 * a * L * in.sigma_sq / (in.n * in.mu) +
         169.0 * a * a * L * L * in.lambda * in.lambda * in.sigma_sq / (in.mu * (1.0 - in.lambda));
}

// Bound on E f(xbar^(t)) - f* at iteration t.
inline double theorem2_bound(const BoundInputs& in, double t) {
  in.check();
  if (!(in.mu > 0.0)) throw UnsupportedRegime("theorem2 bound requires mu > 0");
  const double s = std::sqrt(in.lambda);
  const double a = in.alpha;
  const double L = in.L;
  const double rho1 = theorem2_rho1(a, in.mu);
  const double rho2 = theorem2_rho2(in.beta, in.lambda);
  const double transient1 =
      (9.0 * in.f0_gap + theorem2_d1(in.beta, in.lambda) * a * a * a * L * L * in.zeta0_sq /
                             ((1.0 - s) * (1.0 - s))) *
      std::pow(rho1, t);
  const double transient2 =
      theorem2_d2(in.beta, in.lambda) * a * a * L * in.zeta0_sq * std::pow(rho2, t) / (1.0 - in.lambda);
  return transient1 + transient2 + theorem2_floor(in);
}

// ---------------------------------------------------------------------------

struct RateFit {
  double slope = 0.0;      // d log(subopt) / dt over the transient window
  double r_squared = 0.0;  // of the log-linear fit
  double floor = 0.0;      // mean subopt over the final window
  bool clipped = false;    // some subopt <= 0 was clipped to 1e-300
};

inline std::size_t default_rate_window(std::size_t T) { return std::max<std::size_t>(50, T / 10); }

// Log-linear least squares over the first `window` values; floor over the last.
inline RateFit empirical_rate(const std::vector<double>& subopt, std::size_t window) {
  if (window < 2 || subopt.size() < 2 * window)
    throw InvalidInput("empirical_rate needs at least 2*window entries");
  RateFit fit;
  std::vector<double> y(window);
  for (std::size_t k = 0; k < window; ++k) {
    double v = subopt[k];
    if (!(v > 0.0)) {
      v = 1e-300;
      fit.clipped = true;
    }
    y[k] = std::log(v);
  }
  const double w = static_cast<double>(window);
  const double xm = (w - 1.0) / 2.0;
  double ym = 0.0;
  for (double v : y) ym += v;
  ym /= w;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < window; ++k) {
    const double dx = static_cast<double>(k) - xm;
    const double dy = y[k] - ym;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  fit.slope = sxy / sxx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  double tail = 0.0;
  for (std::size_t k = subopt.size() - window; k < subopt.size(); ++k) {
    double v = subopt[k];
    if (!(v > 0.0)) {
      v = 1e-300;
      fit.clipped = true;
    }
    tail += v;
  }
  fit.floor = tail / w;
  return fit;
}

}  // namespace decent_opt
