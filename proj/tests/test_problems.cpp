#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "decent_opt/problems.hpp"
#include "fixtures.hpp"

using namespace decent_opt;
using fixtures::mat;
using fixtures::vec;

namespace {

QuadraticProblem small_quadratic(double c = 1.0, double sigma = 0.0, std::uint64_t seed = 3) {
  QuadraticParams q;
  q.n = 6;
  q.d = 4;
  q.p = 8;
  q.c = c;
  q.sigma = sigma;
  q.seed = seed;
  return gen_quadratic(q);
}

LogisticProblem small_logistic(double sigma_h, double sigma_s = 0.1, std::uint64_t seed = 5) {
  LogisticParams l;
  l.n = 4;
  l.d = 5;
  l.m = 200;
  l.sigma_h = sigma_h;
  l.mu_reg = 0.01;
  l.sigma_s = sigma_s;
  l.seed = seed;
  return gen_logistic(l);
}

// Empirical mean and E||g - grad||^2 of K stochastic gradients at x.
std::pair<Vector, double> monte_carlo(const Problem& p, std::size_t agent, const Vector& x, std::size_t K,
                                      Vector* stderr_out = nullptr) {
  const Vector g = p.full_gradient(agent, x);
  Vector sum = Vector::Zero(g.size());
  Vector sumsq = Vector::Zero(g.size());
  double var = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    RngStream rng(99, StreamTag::kGradientNoise, agent, k);
    const Vector s = p.stochastic_gradient(agent, x, rng);
    sum += s;
    sumsq += s.cwiseProduct(s);
    var += (s - g).squaredNorm();
  }
  const double k = static_cast<double>(K);
  const Vector mean = sum / k;
  if (stderr_out) *stderr_out = ((sumsq / k - mean.cwiseProduct(mean)) / k).cwiseSqrt();
  return {mean, var / k};
}

}  // namespace

TEST(Quadratic, HandExample) {
  const auto p = fixtures::hand_problem();
  EXPECT_DOUBLE_EQ(p.x_star()(0), 1.0);
  EXPECT_DOUBLE_EQ(p.x_local_star(0)(0), 0.0);
  EXPECT_DOUBLE_EQ(p.x_local_star(1)(0), 2.0);
  EXPECT_DOUBLE_EQ(heterogeneity(p), 1.0);
  const auto k = constants(p);
  EXPECT_DOUBLE_EQ(k.L, 1.0);
  EXPECT_DOUBLE_EQ(k.mu, 1.0);
  EXPECT_DOUBLE_EQ(k.f_star, 0.5);
  EXPECT_TRUE(k.f_star_exact);
  EXPECT_EQ(k.reference, "closed_form");
  EXPECT_DOUBLE_EQ(full_gradient(p, 0, vec({1.0}))(0), 1.0);
  EXPECT_DOUBLE_EQ(full_gradient(p, 1, vec({1.0}))(0), -1.0);
}

TEST(Quadratic, ExplicitFourAgentMatchesOracle) {
  const auto p = fixtures::explicit_problem();
  const Vector xs = vec({-0.2698541329011345, 0.3500810372771475, 0.6839546191247975});
  EXPECT_LE((p.x_star() - xs).norm(), 1e-14);
  const auto k = constants(p);
  EXPECT_NEAR(k.L, 7.162277660168379, 1e-12);
  EXPECT_NEAR(k.mu, 1.650438938691882, 1e-12);
  EXPECT_NEAR(k.zeta_sq, 17.23102117148118, 1e-11);
  EXPECT_NEAR(k.f_star, 1.9717762358184765, 1e-12);
}

TEST(Quadratic, IdentityDesign) {
  const QuadraticProblem p({Matrix::Identity(3, 3)}, {vec({1.0, 2.0, 3.0})}, 1.0, 0.0);
  const auto k = constants(p);
  EXPECT_DOUBLE_EQ(k.L, 1.0);
  EXPECT_DOUBLE_EQ(k.mu, 1.0);
  EXPECT_DOUBLE_EQ(k.zeta_sq, 0.0);
}

TEST(Quadratic, LocalMinimizerHasZeroGradient) {
  const auto p = small_quadratic(2.5);
  for (std::size_t i = 0; i < p.n(); ++i) EXPECT_LE(p.full_gradient(i, p.x_local_star(i)).norm(), 1e-12);
}

TEST(Quadratic, GlobalOptimality) {
  QuadraticParams q;  // Figure-1 scale, literal loss
  q.seed = 11;
  const auto p = gen_quadratic(q);
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(p.d()));
  double ops = 0.0;
  for (std::size_t i = 0; i < p.n(); ++i) {
    sum += p.full_gradient(i, p.x_star());
    ops += detail::op_norm_sq(p.design(i));
  }
  EXPECT_LE(sum.norm(), 1e-9 * ops);
}

TEST(Quadratic, HomogeneousLimit) {
  const auto p = small_quadratic(1e18);
  for (std::size_t i = 0; i < p.n(); ++i) EXPECT_LE((p.x_local_star(i) - p.x_star()).norm(), 1e-15);
  EXPECT_LE(heterogeneity(p), 1e-18);
}

TEST(Quadratic, HeterogeneityScalesAsInverseSquare) {
  const double base = heterogeneity(small_quadratic(1.0));
  for (double c : {1.0, 2.0, 4.0, 8.0}) {
    const double z = heterogeneity(small_quadratic(c));
    EXPECT_NEAR(z * c * c / base, 1.0, 1e-9) << c;
  }
  EXPECT_NEAR(heterogeneity(small_quadratic(2.0)) / heterogeneity(small_quadratic(1.0)), 0.25, 1e-9);
}

TEST(Quadratic, SameSeedSameInstanceAcrossSigma) {
  const auto a = small_quadratic(1.0, 0.0);
  const auto b = small_quadratic(1.0, 0.7);
  for (std::size_t i = 0; i < a.n(); ++i) EXPECT_EQ(a.design(i), b.design(i));
  EXPECT_EQ(a.x_star(), b.x_star());
  const auto other = small_quadratic(1.0, 0.0, 4);
  EXPECT_NE(a.design(0), other.design(0));
}

TEST(Quadratic, PlAndSmoothnessInequalities) {
  const auto p = small_quadratic(1.0);
  const auto k = constants(p);
  RngStream rng(17, StreamTag::kRegenerate);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = detail::gaussian_vector(static_cast<Eigen::Index>(p.d()), rng, 3.0);
    const double gap = p.value(x) - k.f_star;
    const double g2 = p.gradient(x).squaredNorm();
    EXPECT_LE(2.0 * k.mu * gap, g2 * (1.0 + 1e-9));
    EXPECT_LE(g2, 2.0 * k.L * gap * (1.0 + 1e-9));
  }
}

TEST(Quadratic, ZeroSigmaIsExact) {
  const auto p = small_quadratic(1.0, 0.0);
  RngStream rng(1, StreamTag::kGradientNoise);
  const Vector x = vec({0.3, -0.1, 2.0, 0.5});
  EXPECT_EQ(p.stochastic_gradient(2, x, rng), p.full_gradient(2, x));
}

TEST(Quadratic, MonteCarloUnbiasedAndVarianceBound) {
  const auto p = fixtures::figure1(1.0, 0.05);
  const Vector x = Vector::LinSpaced(10, -1.0, 1.0);
  constexpr std::size_t K = 100000;
  Vector se;
  const auto [mean, var] = monte_carlo(p, 3, x, K, &se);
  const Vector g = p.full_gradient(3, x);
  for (Eigen::Index j = 0; j < g.size(); ++j) EXPECT_LE(std::abs(mean(j) - g(j)), 4.0 * se(j)) << j;
  const double bound = 3.0 * p.sigma() * p.design(3).norm() / std::sqrt(static_cast<double>(K));
  EXPECT_LE((mean - g).cwiseAbs().maxCoeff(), bound);
  // per-agent variance is sigma^2 tr(A_i^T A_i) exactly; the recorded bound is the max over agents
  const double exact = p.sigma() * p.sigma() * p.hessian(3).trace();
  EXPECT_NEAR(var / exact, 1.0, 0.02);
  EXPECT_LE(var, p.noise_variance_bound() * 1.05);
}

TEST(Quadratic, NormalizeScalesDesignAndNoise) {
  QuadraticParams q;
  q.n = 3;
  q.d = 2;
  q.p = 4;
  q.sigma = 0.5;
  q.seed = 9;
  const auto raw = gen_quadratic(q);
  q.normalize = true;
  const auto scaled = gen_quadratic(q);
  EXPECT_LE((scaled.design(1) * 2.0 - raw.design(1)).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(scaled.sigma(), 0.25);
  EXPECT_NEAR(scaled.noise_variance_bound(), raw.noise_variance_bound() / 16.0, 1e-12);
}

TEST(Quadratic, RejectsBadParameters) {
  QuadraticParams q;
  q.p = 5;
  EXPECT_THROW(gen_quadratic(q), InvalidInput);
  q.p = 20;
  q.c = 0.0;
  EXPECT_THROW(gen_quadratic(q), InvalidInput);
  EXPECT_THROW(QuadraticProblem({mat({{1.0, 1.0}})}, {vec({0.0, 0.0})}, 1.0, 0.0), InvalidInput);
}

TEST(Quadratic, DimensionChecks) {
  const auto p = fixtures::hand_problem();
  RngStream rng(1, StreamTag::kGradientNoise);
  EXPECT_THROW(full_gradient(p, 0, vec({1.0, 2.0})), InvalidInput);
  EXPECT_THROW(full_gradient(p, 2, vec({1.0})), InvalidInput);
  EXPECT_THROW(stochastic_gradient(p, 0, vec({1.0, 2.0}), rng), InvalidInput);
}

TEST(Logistic, LabelsAndSmoothness) {
  const auto p = small_logistic(0.5);
  for (std::size_t i = 0; i < p.n(); ++i)
    for (Eigen::Index j = 0; j < p.labels(i).size(); ++j)
      EXPECT_TRUE(p.labels(i)(j) == 1.0 || p.labels(i)(j) == -1.0);
  const auto k = constants(p);
  EXPECT_DOUBLE_EQ(k.mu, 0.01);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.n(); ++i)
    worst = std::max(worst, detail::op_norm_sq(p.covariates(i)) / (4.0 * 200.0));
  EXPECT_NEAR(k.L, 0.01 + worst, 1e-12);
  EXPECT_EQ(k.reference, "reference_solve");
  EXPECT_LE(p.reference().grad_norm, 1e-10);
}

TEST(Logistic, GradientMatchesFiniteDifferences) {
  const auto p = small_logistic(0.5);
  const Vector x = vec({0.2, -0.4, 0.1, 0.3, -0.2});
  const Vector g = p.full_gradient(1, x);
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector e = Vector::Zero(x.size());
    e(j) = 1e-6;
    const double fd = (p.local_value(1, x + e) - p.local_value(1, x - e)) / 2e-6;
    EXPECT_NEAR(g(j), fd, 1e-8);
  }
}

TEST(Logistic, PenaltyVanishesAtOrigin) {
  const auto p = small_logistic(0.5);
  const LogisticProblem unreg({p.covariates(0)}, {p.labels(0)}, 1e-300, 0.0);
  const Vector zero = Vector::Zero(5);
  EXPECT_LE((p.full_gradient(0, zero) - unreg.full_gradient(0, zero)).norm(), 1e-15);
}

TEST(Logistic, AdditiveNoiseVariance) {
  LogisticParams l;
  l.n = 2;
  l.d = 20;
  l.m = 10;
  l.sigma_s = 0.1;
  l.seed = 2;
  const auto p = gen_logistic(l);
  EXPECT_NEAR(p.noise_variance_bound(), 0.2, 1e-15);
  const Vector x = Vector::Constant(20, 0.1);
  const auto [mean, var] = monte_carlo(p, 0, x, 100000);
  // E||s||^2 = d sigma_s^2; the sample mean of a chi-square(20) / 20 has sd sqrt(2/20)/sqrt(K)
  EXPECT_NEAR(var, 0.2, 3.0 * 0.2 * std::sqrt(2.0 / 20.0 / 100000.0));
  EXPECT_LE((mean - p.full_gradient(0, x)).cwiseAbs().maxCoeff(), 4.0 * 0.1 / std::sqrt(100000.0));
}

TEST(Logistic, HomogeneousHasSmallHeterogeneity) {
  LogisticParams l;
  l.n = 8;
  l.d = 3;
  l.m = 4000;
  l.sigma_h = 0.0;
  l.seed = 21;
  const double homog = heterogeneity(gen_logistic(l));
  l.sigma_h = 2.0;
  const double heter = heterogeneity(gen_logistic(l));
  // sampling noise of order d/m versus a parameter spread of order sigma_h
  EXPECT_LT(homog, 0.01);
  EXPECT_GT(heter, 20.0 * homog);
}

TEST(Logistic, SaturatedSigmoidGivesSignLabels) {
  LogisticParams l;
  l.n = 1;
  l.d = 1;
  l.m = 1;
  l.base = 1e6;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    l.seed = seed;
    const auto p = gen_logistic(l);
    const double u = p.covariates(0)(0, 0);
    EXPECT_EQ(p.labels(0)(0), u > 0 ? 1.0 : -1.0);
  }
}

TEST(Logistic, RejectsBadInput) {
  EXPECT_THROW(LogisticProblem({mat({{1.0}})}, {vec({0.5})}, 0.1, 0.0), InvalidInput);
  EXPECT_THROW(LogisticProblem({mat({{1.0}})}, {vec({1.0})}, 0.0, 0.0), InvalidInput);
  LogisticParams l;
  l.m = 0;
  EXPECT_THROW(gen_logistic(l), InvalidInput);
}

TEST(Welsch, LossBoundsAndGradient) {
  WelschParams w;
  w.seed = 4;
  const auto p = gen_welsch(w);
  const auto k = constants(p);
  EXPECT_EQ(k.mu, 0.0);
  EXPECT_FALSE(k.f_star_exact);
  EXPECT_EQ(k.f_star, 0.0);
  EXPECT_GT(k.L, 0.0);
  EXPECT_LE(p.reference().grad_norm, 1e-10);
  RngStream rng(3, StreamTag::kRegenerate);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = detail::gaussian_vector(5, rng, 2.0);
    for (std::size_t i = 0; i < p.n(); ++i) {
      const double v = p.local_value(i, x);
      EXPECT_GE(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const Vector g = p.full_gradient(2, x);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      Vector e = Vector::Zero(5);
      e(j) = 1e-6;
      EXPECT_NEAR(g(j), (p.local_value(2, x + e) - p.local_value(2, x - e)) / 2e-6, 1e-7);
    }
  }
}

TEST(Welsch, GradientIsLipschitz) {
  WelschParams w;
  w.seed = 8;
  const auto p = gen_welsch(w);
  RngStream rng(5, StreamTag::kRegenerate);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector x = detail::gaussian_vector(5, rng, 2.0);
    const Vector y = x + detail::gaussian_vector(5, rng, 0.3);
    for (std::size_t i = 0; i < p.n(); ++i)
      EXPECT_LE((p.full_gradient(i, x) - p.full_gradient(i, y)).norm(), p.smoothness() * (x - y).norm() * (1 + 1e-12));
  }
}

TEST(Dump, RoundTripAllKinds) {
  std::vector<std::unique_ptr<Problem>> problems;
  problems.push_back(std::make_unique<QuadraticProblem>(small_quadratic(3.0, 0.2)));
  problems.push_back(std::make_unique<LogisticProblem>(small_logistic(0.3)));
  WelschParams w;
  w.n = 3;
  w.m = 7;
  problems.push_back(std::make_unique<WelschProblem>(gen_welsch(w)));
  for (const auto& p : problems) {
    std::stringstream ss;
    p->dump(ss);
    const auto back = load_problem(ss);
    ASSERT_EQ(back->kind(), p->kind());
    ASSERT_EQ(back->n(), p->n());
    ASSERT_EQ(back->d(), p->d());
    EXPECT_EQ(back->smoothness(), p->smoothness());
    EXPECT_EQ(back->noise_variance_bound(), p->noise_variance_bound());
    const Vector x = Vector::LinSpaced(static_cast<Eigen::Index>(p->d()), -0.5, 0.7);
    for (std::size_t i = 0; i < p->n(); ++i) {
      EXPECT_EQ(back->full_gradient(i, x), p->full_gradient(i, x));
      RngStream r1(4, StreamTag::kGradientNoise, i, 0), r2(4, StreamTag::kGradientNoise, i, 0);
      EXPECT_EQ(back->stochastic_gradient(i, x, r1), p->stochastic_gradient(i, x, r2));
    }
  }
}

TEST(Dump, RejectsUnknownKind) {
  std::istringstream in("kind=mystery\nn=1\n");
  EXPECT_THROW(load_problem(in), InvalidInput);
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
  RngStream a(1, StreamTag::kGradientNoise, 2, 3), b(1, StreamTag::kGradientNoise, 2, 3);
  RngStream c(1, StreamTag::kGradientNoise, 2, 4), d(1, StreamTag::kDesign, 2, 3);
  const double x = a.normal();
  EXPECT_EQ(x, b.normal());
  EXPECT_NE(x, c.normal());
  EXPECT_NE(x, d.normal());
  double mean = 0.0;
  RngStream u(7, StreamTag::kLabels);
  for (int k = 0; k < 100000; ++k) {
    const double v = u.uniform();
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
    mean += v;
  }
  EXPECT_NEAR(mean / 100000.0, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / 100000.0));
}
