#include <gtest/gtest.h>

#include <cmath>

#include "decent_opt/analysis.hpp"
#include "decent_opt/runner.hpp"
#include "fixtures.hpp"

using namespace decent_opt;
using fixtures::mat;
using fixtures::vec;

namespace {

AlgorithmSpec edm(double alpha, double beta) {
  AlgorithmSpec s;
  s.kind = AlgorithmKind::kEdm;
  s.alpha = alpha;
  s.beta = beta;
  return s;
}

QuadraticProblem random_quadratic(std::uint64_t seed, double sigma = 0.0) {
  QuadraticParams q;
  q.n = 6;
  q.d = 3;
  q.p = 5;
  q.c = 1.0;
  q.sigma = sigma;
  q.normalize = true;
  q.seed = seed;
  return gen_quadratic(q);
}

BoundInputs inputs() {
  BoundInputs in;
  in.alpha = 0.01;
  in.beta = 0.9;
  in.lambda = 0.9;
  in.L = 2.0;
  in.mu = 0.5;
  in.sigma_sq = 0.1;
  in.zeta0_sq = 3.0;
  in.n = 16;
  in.T = 1000;
  in.f0_gap = 4.0;
  return in;
}

}  // namespace

TEST(Consensus, RowDemeaningMatchesProjector) {
  RngStream rng(1, StreamTag::kRegenerate);
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index n = 2 + k % 7;
    const Matrix X = detail::gaussian_matrix(n, 4, rng) * 10.0;
    const Matrix P = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    EXPECT_LE((project_consensus_out(X) - P * X).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(consensus_sq(X), (P * X).squaredNorm(), 1e-12 * (1.0 + X.squaredNorm()));
  }
}

TEST(Metrics, ConsensusExamples) {
  const auto p = fixtures::hand_problem();
  OptimizerState s;
  s.X = mat({{1.0}, {-1.0}});
  s.M = Matrix::Zero(2, 1);
  EXPECT_DOUBLE_EQ(consensus_sq(s.X), 2.0);
  EXPECT_DOUBLE_EQ(metrics(p, s).consensus_dev, 1.0);
  s.X = mat({{0.3}, {0.3}});
  EXPECT_EQ(metrics(p, s).consensus_dev, 0.0);
}

TEST(Metrics, AtOptimum) {
  const auto p = fixtures::explicit_problem();
  OptimizerState s;
  s.X = p.x_star().transpose().replicate(4, 1);
  s.M = Matrix::Zero(4, 3);
  const auto m = metrics(p, s);
  EXPECT_LE(m.grad_avg_sq, 1e-18);
  EXPECT_LE(std::abs(m.subopt), 1e-15);
  EXPECT_LE(m.dist_sq, 1e-30);
  EXPECT_GT(m.grad_bar_sq, -1.0);
  const auto hp = fixtures::hand_problem();
  s.X = mat({{1.0}, {1.0}});
  s.M = Matrix::Zero(2, 1);
  const auto h = metrics(hp, s);
  EXPECT_EQ(h.subopt, 0.0);
  EXPECT_EQ(h.grad_avg_sq, 0.0);
}

TEST(Metrics, WelschDistanceIsNaN) {
  WelschParams w;
  w.n = 3;
  const auto p = gen_welsch(w);
  OptimizerState s;
  s.X = Matrix::Zero(3, 5);
  s.M = Matrix::Zero(3, 5);
  const auto m = metrics(p, s);
  EXPECT_TRUE(std::isnan(m.dist_sq));
  EXPECT_GT(m.subopt, 0.0);
}

TEST(AuxZ, Examples) {
  EXPECT_EQ(aux_z(vec({3.0}), vec({1.0}), 0.0)(0), 3.0);
  EXPECT_DOUBLE_EQ(aux_z(vec({2.5}), vec({2.5}), 0.7)(0), 2.5);
  EXPECT_DOUBLE_EQ(aux_z(vec({1.0}), vec({0.0}), 0.5)(0), 2.0);
}

TEST(AuxZ, TelescopingAlongTrajectory) {
  const auto p = random_quadratic(3, 0.4);
  const auto w = build_ring(6);
  const double beta = 0.8;
  std::vector<Vector> xbar;
  const auto tr = run(edm(0.05, beta), p, w, 300, Vector::Ones(3), 2, {},
                      [&](const OptimizerState& before, const StepResult& r) {
                        if (xbar.empty()) xbar.push_back(row_mean(before.X));
                        xbar.push_back(row_mean(r.state.X));
                      });
  ASSERT_TRUE(tr.ok());
  // xbar^(-1) = xbar^(0)
  for (std::size_t t = 1; t + 1 < xbar.size(); ++t) {
    const Vector dz = aux_z(xbar[t + 1], xbar[t], beta) - aux_z(xbar[t], xbar[t - 1], beta);
    const Vector expected = (xbar[t + 1] - xbar[t]) / (1 - beta) - beta * (xbar[t] - xbar[t - 1]) / (1 - beta);
    EXPECT_LE((dz - expected).norm(), 1e-10);
  }
}

TEST(Zeta0, HandExample) {
  const auto p = fixtures::hand_problem();
  EXPECT_NEAR(zeta0_sq(fixtures::hand_mixing(), p, mat({{0.0}, {0.0}})), 0.25, 1e-15);
}

TEST(Zeta0, ExplicitProblem) {
  const auto p = fixtures::explicit_problem();
  const Matrix X0 = fixtures::explicit_x0().transpose().replicate(4, 1);
  EXPECT_NEAR(zeta0_sq(fixtures::explicit_mixing(), p, X0), 12.640076041606472, 1e-12);
}

TEST(Zeta0, HomogeneousAndScaling) {
  QuadraticParams q;
  q.n = 5;
  q.d = 3;
  q.p = 4;
  q.seed = 2;
  q.c = 1e18;
  const auto w = build_ring(5);
  const auto homog = gen_quadratic(q);
  EXPECT_LE(zeta0_sq(w, homog, homog.x_star().transpose().replicate(5, 1)), 1e-18);
  q.c = 1.0;
  const auto base = gen_quadratic(q);
  q.c = 1.0 / 3.0;  // deviations u_i - x* scaled by 3
  const auto scaled = gen_quadratic(q);
  const Matrix X0 = base.x_star().transpose().replicate(5, 1);
  EXPECT_NEAR(zeta0_sq(w, scaled, X0) / zeta0_sq(w, base, X0), 9.0, 1e-9);
}

TEST(Shadow, FirstStep) {
  const auto p = fixtures::explicit_problem();
  const auto w = fixtures::explicit_mixing();
  const Matrix X0 = fixtures::explicit_x0().transpose().replicate(4, 1);
  const auto s0 = shadow_init(X0, p, 0.02, 0.6, ShadowVariant::kNonconvex, true);
  EXPECT_TRUE(s0.Yt.isZero(0.0));
  EXPECT_LE((s0.Mt - 0.4 * p.stacked_gradient(X0)).norm(), 1e-15);
  const auto s1 = shadow_step(s0, X0, w, p);
  const Matrix expected = w.weights() * (X0 - 0.02 * 0.4 * p.stacked_gradient(X0));
  EXPECT_LE((s1.Xt_curr - expected).norm(), 1e-14);
  EXPECT_LE((s1.X1 - expected).norm(), 1e-14);
}

TEST(Shadow, CollapsesWithoutNoise) {
  const auto p = random_quadratic(5);
  MonitorSet mon;
  mon.shadow = true;
  mon.shadow_cross_check = true;
  const auto tr = run(edm(0.05, 0.9), p, build_ring(6), 1000, Vector::Ones(3), 0, mon);
  ASSERT_TRUE(tr.ok());
  EXPECT_LE(tr.max_shadow_collapse, 1e-9);
  EXPECT_LE(tr.max_representation_gap, 1e-8);
  for (const auto& r : tr.rows) EXPECT_LE(r.shadow_gap, 1e-18);
}

TEST(Shadow, RepresentationsAgreeUnderNoise) {
  const auto p = fixtures::figure1(1.0, 0.05);
  MonitorSet mon;
  mon.shadow = true;
  mon.shadow_cross_check = true;
  const auto tr = run(edm(0.05, 0.9), p, build_ring(32), 1000, Vector::Zero(10), 3, mon);
  ASSERT_TRUE(tr.ok());
  EXPECT_LE(tr.max_representation_gap, 1e-8);
  EXPECT_LE(tr.max_momentum_gap, 1e-10 * 1000);
  EXPECT_GT(tr.rows.back().shadow_gap, 0.0);
}

TEST(Shadow, NVariants) {
  const auto p = random_quadratic(6, 0.3);
  const auto w = build_ring(6);
  const double beta = 0.7;
  const auto spec = edm(0.05, beta);
  auto state = init(spec, p, Vector::Ones(3));
  auto nc = shadow_init(state.X, p, 0.05, beta, ShadowVariant::kNonconvex, false);
  auto pl = shadow_init(state.X, p, 0.05, beta, ShadowVariant::kPl, false);
  std::vector<Matrix> gmean = {detail::gradient_at_mean(p, state.X)};
  for (std::size_t t = 1; t <= 50; ++t) {
    state = step(state, spec, w, p, 1).state;
    nc = shadow_step(nc, state.X, w, p);
    pl = shadow_step(pl, state.X, w, p);
    gmean.push_back(detail::gradient_at_mean(p, state.X));
    Matrix expected = std::pow(beta, static_cast<double>(t + 1)) * gmean.front();
    for (std::size_t j = 0; j <= t; ++j)
      expected += (1 - beta) * std::pow(beta, static_cast<double>(t - j)) * gmean[j];
    EXPECT_LE((nc.Nt - expected).norm(), 1e-10);
    EXPECT_LE((pl.Nt - gmean.back()).norm(), 0.0);
    EXPECT_LE((nc.Rt - (nc.Mt - nc.Nt)).norm(), 0.0);
  }
  EXPECT_EQ(to_string(ShadowVariant::kNonconvex), "nonconvex_N");
  EXPECT_EQ(to_string(ShadowVariant::kPl), "pl_N");
}

TEST(LemmaMonitors, NonnegativeOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_quadratic(seed);
    const auto w = lazy_transform(build_ring(6));
    const double lambda = w.profile().lambda;
    for (double beta : {0.0, 0.9}) {
      const double alpha = max_step_size(beta, lambda, p.smoothness(), Regime::kPl);
      MonitorSet mon;
      mon.lemmas = true;
      const auto tr = run(edm(alpha, beta), p, w, 1500, Vector::Constant(3, 2.0), 0, mon);
      ASSERT_TRUE(tr.ok());
      EXPECT_GE(tr.min_lemma1_margin, -kMonitorTol) << seed << " " << beta;
      EXPECT_GE(tr.min_lemma2_margin, -kMonitorTol) << seed << " " << beta;
      EXPECT_GE(tr.min_lemma5_margin, -kMonitorTol) << seed << " " << beta;
    }
  }
}

TEST(LemmaMonitors, Lemma5EqualityWithoutMomentum) {
  const auto p = random_quadratic(2);
  const auto w = build_ring(6);
  double lhs = 0.0, rhs = 0.0;
  const auto tr = run(edm(0.01, 0.0), p, w, 300, Vector::Ones(3), 0, {},
                      [&](const OptimizerState&, const StepResult& r) {
                        lhs += row_mean(r.state.M).squaredNorm();
                        rhs += row_mean(r.G).squaredNorm();
                      });
  ASSERT_TRUE(tr.ok());
  EXPECT_NEAR(lhs, rhs, 1e-12 * rhs);
}

TEST(LemmaMonitors, PlOnHandExample) {
  const auto p = fixtures::hand_problem();
  const auto w = fixtures::hand_mixing();
  const double alpha = max_step_size(0.5, w.profile().lambda, 1.0, Regime::kPl);
  MonitorSet mon;
  mon.lemmas = true;
  const auto tr = run(edm(alpha, 0.5), p, w, 500, vec({0.0}), 0, mon);
  ASSERT_EQ(tr.rows.size(), 500u);
  for (const auto& r : tr.rows) {
    EXPECT_FALSE(std::isnan(r.lemma2_residual));
    EXPECT_GE(r.lemma2_residual, -kMonitorTol * std::max(1.0, std::abs(r.lemma2_residual)));
  }
}

TEST(Lemma3, TrivialAndScaling) {
  const auto p0 = random_quadratic(1);
  const auto w = build_ring(6);
  const auto triv = lemma3_estimate(edm(0.05, 0.9), p0, w, 10, 1, 0, Vector::Zero(3));
  EXPECT_TRUE(triv.trivial);
  EXPECT_TRUE(triv.pass);
  EXPECT_EQ(triv.bound, 0.0);

  const auto p = random_quadratic(1, 0.5);
  EXPECT_THROW(lemma3_estimate(edm(0.05, 0.9), p, w, 10, 29, 0, Vector::Zero(3)), InvalidInput);
  const auto a = lemma3_estimate(edm(0.02, 0.9), p, w, 200, 30, 0, Vector::Zero(3));
  const auto b = lemma3_estimate(edm(0.04, 0.9), p, w, 200, 30, 0, Vector::Zero(3));
  EXPECT_NEAR(b.bound / a.bound, 4.0, 1e-12);
  EXPECT_TRUE(a.pass);
  EXPECT_TRUE(b.pass);
  EXPECT_EQ(a.empirical.front(), 0.0);
  EXPECT_EQ(a.empirical.size(), 201u);
  AlgorithmSpec dsgd;
  dsgd.kind = AlgorithmKind::kDsgd;
  EXPECT_THROW(lemma3_estimate(dsgd, p, w, 10, 30, 0, Vector::Zero(3)), ConfigError);
}

TEST(Bounds, Theorem1SpecialCases) {
  EXPECT_DOUBLE_EQ(theorem1_c0(0.0, 0.99), 24.0 / (1.0 + std::sqrt(0.99)));
  EXPECT_DOUBLE_EQ(theorem1_c0(0.0, 0.0), 24.0);
  BoundInputs in = inputs();
  in.beta = 0.0;
  in.lambda = 0.0;
  const double a = in.alpha, L = in.L;
  const double expected = 2 * in.f0_gap / (a * in.T) + 2 * a * L * in.sigma_sq / in.n + 192 * a * a * L * L * in.zeta0_sq / in.T;
  EXPECT_NEAR(theorem1_bound(in), expected, 1e-15 * expected);
}

TEST(Bounds, Theorem1Monotone) {
  const double base = theorem1_bound(inputs());
  for (auto field : {&BoundInputs::sigma_sq, &BoundInputs::zeta0_sq, &BoundInputs::f0_gap}) {
    BoundInputs in = inputs();
    in.*field *= 2.0;
    EXPECT_GT(theorem1_bound(in), base);
  }
  BoundInputs in = inputs();
  in.sigma_sq = 0.0;
  in.T = 1e15;
  EXPECT_LT(theorem1_bound(in), 1e-10);
}

TEST(Bounds, Theorem2SpecialCases) {
  EXPECT_DOUBLE_EQ(theorem2_d1(0.0, 0.0), 320.0 / 3.0);
  EXPECT_DOUBLE_EQ(theorem2_d2(0.0, 0.0), 400.0 / 3.0);
  EXPECT_DOUBLE_EQ(theorem2_rho2(0.0, 0.0), 0.8);
  EXPECT_DOUBLE_EQ(theorem2_rho1(0.1, 2.0), 0.8);
  EXPECT_DOUBLE_EQ(theorem2_rho2(0.9, 0.0), 1.0 - 0.2 / 5.0);
}

TEST(Bounds, Theorem2Asymptotics) {
  BoundInputs in = inputs();
  const double floor = theorem2_floor(in);
  const double a = in.alpha, L = in.L;
  EXPECT_NEAR(floor,
              6 * a * L * in.sigma_sq / (in.n * in.mu) +
                  169 * a * a * L * L * in.lambda * in.lambda * in.sigma_sq / (in.mu * (1 - in.lambda)),
              1e-15);
  EXPECT_NEAR(theorem2_bound(in, 1e9), floor, 1e-15);
  BoundInputs z = in;
  z.zeta0_sq *= 100.0;
  EXPECT_EQ(theorem2_floor(z), floor);
  EXPECT_GT(theorem2_bound(z, 10), theorem2_bound(in, 10));
  BoundInputs s = in;
  s.sigma_sq *= 2.0;
  EXPECT_GT(theorem2_floor(s), floor);
  // sigma = 0: geometric decay at rate max(rho1, rho2)
  s.sigma_sq = 0.0;
  const double rate = std::max(theorem2_rho1(s.alpha, s.mu), theorem2_rho2(s.beta, s.lambda));
  const double r = theorem2_bound(s, 20001) / theorem2_bound(s, 20000);
  EXPECT_NEAR(r, rate, 1e-9);
  s.mu = 0.0;
  EXPECT_THROW(theorem2_bound(s, 1), UnsupportedRegime);
  EXPECT_THROW(theorem2_floor(s), UnsupportedRegime);
}

TEST(Bounds, InputValidation) {
  BoundInputs in = inputs();
  in.lambda = 1.0;
  EXPECT_THROW(theorem1_bound(in), InvalidInput);
  in = inputs();
  in.sigma_sq = -1.0;
  EXPECT_THROW(theorem1_bound(in), InvalidInput);
}

TEST(EmpiricalRate, GeometricSeries) {
  std::vector<double> s;
  for (int t = 0; t < 400; ++t) s.push_back(3.0 * std::pow(0.97, t));
  const auto fit = empirical_rate(s, 100);
  EXPECT_NEAR(fit.slope, std::log(0.97), 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_FALSE(fit.clipped);
  EXPECT_THROW(empirical_rate(s, 201), InvalidInput);
  s[3] = 0.0;
  EXPECT_TRUE(empirical_rate(s, 100).clipped);
  EXPECT_EQ(default_rate_window(100), 50u);
  EXPECT_EQ(default_rate_window(5000), 500u);
}

TEST(EmpiricalRate, NoiselessPlRun) {
  const auto p = random_quadratic(4);
  const auto w = lazy_transform(build_ring(6));
  const auto tr = run(edm(0.1, 0.5), p, w, 4000, Vector::Ones(3), 0);
  ASSERT_TRUE(tr.ok());
  const auto fit = empirical_rate(tr.column(&MetricRow::subopt), default_rate_window(4000));
  EXPECT_LT(fit.slope, 0.0);
  EXPECT_LE(std::abs(fit.floor), 1e-15);
}
