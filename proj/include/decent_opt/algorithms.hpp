#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "decent_opt/errors.hpp"
#include "decent_opt/problems.hpp"
#include "decent_opt/rng.hpp"
#include "decent_opt/topology.hpp"

namespace decent_opt {

enum class AlgorithmKind { kDsgd, kDmsgd, kEd2, kEdm, kDsgt, kDsgtHb };

inline constexpr AlgorithmKind kAllAlgorithms[] = {AlgorithmKind::kDsgd, AlgorithmKind::kDmsgd,
                                                   AlgorithmKind::kEd2,  AlgorithmKind::kEdm,
                                                   AlgorithmKind::kDsgt, AlgorithmKind::kDsgtHb};

inline std::string to_string(AlgorithmKind k) {
  switch (k) {
    case AlgorithmKind::kDsgd: return "dsgd";
    case AlgorithmKind::kDmsgd: return "dmsgd";
    case AlgorithmKind::kEd2: return "ed2";
    case AlgorithmKind::kEdm: return "edm";
    case AlgorithmKind::kDsgt: return "dsgt";
    case AlgorithmKind::kDsgtHb: return "dsgt_hb";
  }
  return "unknown";
}

inline AlgorithmKind parse_algorithm(const std::string& name) {
  for (auto k : kAllAlgorithms)
    if (to_string(k) == name) return k;
  throw ConfigError("unsupported algorithm '" + name +
                    "'; supported: dsgd, dmsgd, ed2, edm, dsgt, dsgt_hb");
}

inline bool uses_momentum(AlgorithmKind k) {
  return k == AlgorithmKind::kDmsgd || k == AlgorithmKind::kEdm || k == AlgorithmKind::kDsgtHb;
}

struct AlgorithmSpec {
  AlgorithmKind kind = AlgorithmKind::kEdm;
  double alpha = 0.05;
  double beta = 0.0;
  // Step size is multiplied by 0.1 at each listed iteration index.
  std::vector<std::size_t> lr_drops;

  void check() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("alpha must be positive");
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput("beta must lie in [0, 1)");
  }

  double alpha_at(std::size_t t) const {
    double a = alpha;
    for (auto drop : lr_drops)
      if (t >= drop) a *= 0.1;
    return a;
  }

  double effective_beta() const { return uses_momentum(kind) ? beta : 0.0; }
};

// Two-step window of the synchronous recursion. Rows are agents.
struct OptimizerState {
  std::size_t t = 0;
  Matrix X;       // X^(t)
  Matrix X_prev;  // X^(t-1); equals X^(0) at t = 0
  // Descent direction of the latest round: M^(t-1) for momentum methods, G^(t-1)
  // for DSGD and ED/D2, the tracker Y^(t-1) for DSGT. Zero at t = 0.
  Matrix M;
  Matrix M_prev;   // the direction one round earlier
  Matrix psi;      // ED/D2 and EDM adapt output psi^(t); psi^(0) = X^(0)
  Matrix tracker;  // DSGT / DSGT-HB: Y^(t-1)
  Matrix G_prev;   // DSGT / DSGT-HB: G^(t-1)

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(X.cols()); }
};

struct StepRecord {
  std::size_t t = 0;  // round index that was executed
  std::size_t gradient_calls = 0;
  double wall_seconds = 0.0;
  std::uint64_t noise_checksum = 0;
};

struct StepResult {
  OptimizerState state;
  Matrix G;  // stochastic gradients drawn at X^(t)
  StepRecord record;
};

// All agents start at x0 with zeroed history, so X^(-1) = X^(0) and M^(-1) = 0.
// The DSGT tracker starts from the first stochastic gradients: Y^(0) = G^(0).
inline OptimizerState init(const AlgorithmSpec& spec, const Problem& problem, const Vector& x0) {
  spec.check();
  problem.check_point(x0);
  const auto n = static_cast<Eigen::Index>(problem.n());
  const auto d = static_cast<Eigen::Index>(problem.d());
  OptimizerState s;
  s.X = x0.transpose().replicate(n, 1);
  s.X_prev = s.X;
  s.M = Matrix::Zero(n, d);
  s.M_prev = Matrix::Zero(n, d);
  s.psi = s.X;
  s.tracker = Matrix::Zero(n, d);
  s.G_prev = Matrix::Zero(n, d);
  return s;
}

inline std::uint64_t fnv1a_mix(std::uint64_t h, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int k = 0; k < 8; ++k) {
    h ^= (bits >> (8 * k)) & 0xFFu;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline constexpr std::uint64_t kChecksumSeed = 0xCBF29CE484222325ULL;
inline constexpr double kBlowUpNorm = 1e12;

// Throws DivergenceError on a non-finite entry or ||X||_F > 1e12.
inline void check_finite(const Matrix& X, std::size_t t) {
  Eigen::Index worst = 0;
  double worst_norm = -1.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (!X.row(i).allFinite()) throw DivergenceError(t, static_cast<std::size_t>(i));
    const double r = X.row(i).norm();
    if (r > worst_norm) {
      worst_norm = r;
      worst = i;
    }
  }
  if (X.norm() > kBlowUpNorm) throw DivergenceError(t, static_cast<std::size_t>(worst));
}

// One synchronous round t -> t+1. Every kind draws exactly one stochastic
// gradient per agent from the stream keyed (seed, agent, t), so kinds run on the
// same seed see identical noise.
inline StepResult step(const OptimizerState& state, const AlgorithmSpec& spec,
                       const MixingMatrix& w, const Problem& problem, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto& W = w.weights();
  const auto n = state.X.rows();
  const auto t = state.t;
  const double alpha = spec.alpha_at(t);
  const double beta = spec.beta;

  StepResult out;
  out.G.resize(n, state.X.cols());
  std::uint64_t checksum = kChecksumSeed;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto agent = static_cast<std::size_t>(i);
    RngStream rng(seed, StreamTag::kGradientNoise, agent, t);
    const Vector xi = state.X.row(i).transpose();
    const Vector noise = problem.gradient_noise(agent, rng);
    for (Eigen::Index j = 0; j < noise.size(); ++j) checksum = fnv1a_mix(checksum, noise(j));
    out.G.row(i) = (problem.full_gradient(agent, xi) + noise).transpose();
  }
  const Matrix& G = out.G;

  OptimizerState next;
  next.t = t + 1;
  next.X_prev = state.X;
  next.M_prev = state.M;
  next.psi = state.psi;
  next.tracker = state.tracker;
  next.G_prev = state.G_prev;

  switch (spec.kind) {
    case AlgorithmKind::kDsgd:
      next.M = G;
      next.X = W * (state.X - alpha * G);
      break;
    case AlgorithmKind::kDmsgd:
      next.M = beta * state.M + (1.0 - beta) * G;
      next.X = W * (state.X - alpha * next.M);
      break;
    case AlgorithmKind::kEd2:
    case AlgorithmKind::kEdm: {
      // Adapt, correct, combine. With constant alpha this is
      // X^(t+1) = W(2X^(t) - X^(t-1) - alpha M^(t) + alpha M^(t-1)).
      next.M = spec.kind == AlgorithmKind::kEdm ? Matrix(beta * state.M + (1.0 - beta) * G) : G;
      Matrix psi_next = state.X - alpha * next.M;
      const Matrix phi = psi_next + state.X - state.psi;
      next.X = W * phi;
      next.psi = std::move(psi_next);
      break;
    }
    case AlgorithmKind::kDsgt: {
      next.tracker = W * state.tracker + G - state.G_prev;
      next.G_prev = G;
      next.M = next.tracker;
      next.X = W * (state.X - alpha * next.tracker);
      break;
    }
    case AlgorithmKind::kDsgtHb: {
      next.tracker = W * state.tracker + G - state.G_prev;
      next.G_prev = G;
      next.M = beta * state.M + (1.0 - beta) * next.tracker;
      next.X = W * (state.X - alpha * next.M);
      break;
    }
  }
  check_finite(next.X, t);
  out.state = std::move(next);
  out.record.t = t;
  out.record.gradient_calls = static_cast<std::size_t>(n);
  out.record.noise_checksum = checksum;
  out.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

enum class Regime { kNonconvex, kPl };

inline Regime parse_regime(const std::string& s) {
  if (s == "nonconvex") return Regime::kNonconvex;
  if (s == "pl") return Regime::kPl;
  throw ConfigError("unknown regime '" + s + "'; expected nonconvex or pl");
}

// Admissible step size. Non-convex: min{(1-sqrt(lambda))/(4L), (1-beta)/(4L)}.
// PL: min{(1-sqrt(lambda))/10, (1-beta)/5} read as a bound on alpha*L.
inline double max_step_size(double beta, double lambda, double L, Regime regime) {
  const double root = 1.0 - std::sqrt(lambda);
  if (regime == Regime::kNonconvex) return std::min(root / (4.0 * L), (1.0 - beta) / (4.0 * L));
  return std::min(root / 10.0, (1.0 - beta) / 5.0) / L;
}

// The PL condition exactly as printed, with no L.
inline double max_step_size_literal_pl(double beta, double lambda) {
  return std::min((1.0 - std::sqrt(lambda)) / 10.0, (1.0 - beta) / 5.0);
}

}  // namespace decent_opt
