#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "decent_opt/csv.hpp"
#include "decent_opt/errors.hpp"
#include "decent_opt/rng.hpp"

namespace decent_opt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ProblemKind { kQuadratic, kLogistic, kWelsch };

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::kQuadratic: return "quadratic";
    case ProblemKind::kLogistic: return "logistic";
    case ProblemKind::kWelsch: return "welsch";
  }
  return "unknown";
}

struct ProblemConstants {
  double L = 0.0;         // smoothness of every f_i
  double mu = 0.0;        // PL / strong convexity of f; 0 if unknown
  double sigma_sq = 0.0;  // bound on E||g_i - grad f_i||^2
  double zeta_sq = 0.0;   // heterogeneity at the reference minimizer
  double f_star = 0.0;    // optimal value, or a lower bound when !f_star_exact
  bool f_star_exact = false;
  std::string reference;  // "closed_form" | "reference_solve" | "stationary_point"
};

struct ReferenceSolution {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  std::string source;
};

// Finite-sum objective f = (1/n) sum_i f_i with per-agent gradient oracles.
// Immutable after construction; all oracles are safe to call concurrently.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual ProblemKind kind() const = 0;
  virtual std::size_t n() const = 0;
  virtual std::size_t d() const = 0;

  virtual double local_value(std::size_t agent, const Vector& x) const = 0;
  virtual Vector full_gradient(std::size_t agent, const Vector& x) const = 0;

  // Zero-mean gradient noise. Every family here uses noise that does not
  // depend on x, which keeps noise streams identical across algorithms.
  virtual Vector gradient_noise(std::size_t agent, RngStream& rng) const = 0;

  virtual double smoothness() const = 0;
  virtual double strong_convexity() const = 0;
  virtual double noise_variance_bound() const = 0;

  virtual void dump(std::ostream& os) const = 0;

  // Minimizer used for metrics (closed form or centralized reference solve).
  const ReferenceSolution& reference() const {
    std::call_once(ref_->once, [this] { ref_->solution = solve_reference(); });
    return ref_->solution;
  }

  virtual bool has_exact_optimum() const { return true; }

  Vector stochastic_gradient(std::size_t agent, const Vector& x, RngStream& rng) const {
    Vector g = full_gradient(agent, x);
    g += gradient_noise(agent, rng);
    return g;
  }

  double value(const Vector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n(); ++i) s += local_value(i, x);
    return s / static_cast<double>(n());
  }

  Vector gradient(const Vector& x) const {
    Vector g = Vector::Zero(static_cast<Eigen::Index>(d()));
    for (std::size_t i = 0; i < n(); ++i) g += full_gradient(i, x);
    return g / static_cast<double>(n());
  }

  // Stacked rows grad f_i(x_i).
  Matrix stacked_gradient(const Matrix& X) const {
    check_rows(X);
    Matrix G(X.rows(), X.cols());
    for (std::size_t i = 0; i < n(); ++i) {
      const Vector xi = X.row(static_cast<Eigen::Index>(i)).transpose();
      G.row(static_cast<Eigen::Index>(i)) = full_gradient(i, xi).transpose();
    }
    return G;
  }

  void check_point(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != d())
      throw InvalidInput("dimension mismatch: expected " + std::to_string(d()) + ", got " +
                         std::to_string(x.size()));
  }
  void check_agent(std::size_t agent) const {
    if (agent >= n()) throw InvalidInput("agent index out of range");
  }
  void check_rows(const Matrix& X) const {
    if (static_cast<std::size_t>(X.rows()) != n() || static_cast<std::size_t>(X.cols()) != d())
      throw InvalidInput("parameter matrix must be n x d");
  }

 protected:
  virtual ReferenceSolution solve_reference() const = 0;

  // Full-gradient descent with Armijo backtracking on f.
  ReferenceSolution descend(Vector x, double tol, std::size_t max_iter,
                            const std::string& source) const {
    double step = 1.0 / smoothness();
    double fx = value(x);
    Vector g = gradient(x);
    for (std::size_t k = 0; k < max_iter && g.norm() > tol; ++k) {
      double s = step * 2.0;
      Vector trial;
      double ft = 0.0;
      while (true) {
        trial = x - s * g;
        ft = value(trial);
        if (ft <= fx - 0.5 * s * g.squaredNorm() || s < 1e-20) break;
        s *= 0.5;
      }
      if (trial == x || s < 1e-20) break;
      x = std::move(trial);
      fx = ft;
      step = s;
      g = gradient(x);
    }
    // f stops resolving the decrease near the optimum; finish with fixed 1/L steps
    const double fixed = 1.0 / smoothness();
    for (std::size_t k = 0; k < max_iter && g.norm() > tol; ++k) {
      x -= fixed * g;
      g = gradient(x);
    }
    fx = value(x);
    const double gn = g.norm();
    if (gn > tol)
      throw DiagnosticsError("reference minimization stalled at ||grad f|| = " +
                                 csv::format_double(gn),
                             gn);
    return {x, fx, gn, source};
  }

 private:
  struct RefCache {
    std::once_flag once;
    ReferenceSolution solution;
  };
  // Shared between copies: problems are immutable, so the solve is too.
  std::shared_ptr<RefCache> ref_ = std::make_shared<RefCache>();
};

// zeta^2 = (1/n) sum_i ||grad f_i(x*) - grad f(x*)||^2 at the reference point.
inline double heterogeneity(const Problem& p) {
  const Vector& xs = p.reference().x;
  const Vector gbar = p.gradient(xs);
  double s = 0.0;
  for (std::size_t i = 0; i < p.n(); ++i) s += (p.full_gradient(i, xs) - gbar).squaredNorm();
  return s / static_cast<double>(p.n());
}

inline ProblemConstants constants(const Problem& p) {
  ProblemConstants c;
  c.L = p.smoothness();
  c.mu = p.strong_convexity();
  c.sigma_sq = p.noise_variance_bound();
  const auto& ref = p.reference();
  c.zeta_sq = heterogeneity(p);
  c.f_star_exact = p.has_exact_optimum();
  c.f_star = c.f_star_exact ? ref.value : 0.0;
  c.reference = ref.source;
  return c;
}

inline Vector full_gradient(const Problem& p, std::size_t agent, const Vector& x) {
  p.check_agent(agent);
  p.check_point(x);
  return p.full_gradient(agent, x);
}

inline Vector stochastic_gradient(const Problem& p, std::size_t agent, const Vector& x,
                                  RngStream& rng) {
  p.check_agent(agent);
  p.check_point(x);
  return p.stochastic_gradient(agent, x, rng);
}

namespace detail {

inline double op_norm_sq(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a.transpose() * a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline Vector gaussian_vector(Eigen::Index size, RngStream& rng, double scale = 1.0) {
  Vector v(size);
  for (Eigen::Index j = 0; j < size; ++j) v(j) = scale * rng.normal();
  return v;
}

// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// 1 / (1 + exp(t)) without overflow.
inline double inv_one_plus_exp(double t) {
  if (t >= 0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

// Portable problem dump: `key=value` header lines, then `[name]` blocks of CSV rows.
struct Dump {
  std::map<std::string, std::string> header;
  std::map<std::string, Matrix> blocks;

  void write(std::ostream& os) const {
    os << "# decent_opt problem dump\n";
    for (const auto& [k, v] : header) os << k << '=' << v << '\n';
    for (const auto& [name, m] : blocks) {
      os << '[' << name << "]\n";
      csv::write_matrix(os, m);
    }
  }

  static Dump read(std::istream& is) {
    Dump d;
    std::string line;
    std::string current;
    std::string body;
    auto flush = [&] {
      if (current.empty()) return;
      std::istringstream bs(body);
      d.blocks[current] = csv::parse_matrix(bs);
      body.clear();
    };
    while (std::getline(is, line)) {
      const auto t = csv::trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        flush();
        current = t.substr(1, t.size() - 2);
        continue;
      }
      if (current.empty()) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw InvalidInput("bad dump header line: " + t);
        d.header[csv::trim(t.substr(0, eq))] = csv::trim(t.substr(eq + 1));
      } else {
        body += t + "\n";
      }
    }
    flush();
    return d;
  }

  const std::string& get(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw InvalidInput("problem dump missing key " + key);
    return it->second;
  }
  double num(const std::string& key) const { return csv::parse_double(get(key)); }
  const Matrix& block(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw InvalidInput("problem dump missing block " + name);
    return it->second;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear regression: f_i(x) = 1/2 E||y_i - A_i x||^2 with y_i = A_i x_i* + eps,
// eps ~ N(0, sigma^2 I_p) fresh per query. Values drop the constant p*sigma^2/2.

struct QuadraticParams {
  std::size_t n = 32;
  std::size_t d = 10;
  std::size_t p = 20;
  double c = 1.0;      // heterogeneity divisor
  double sigma = 0.0;  // response noise std
  // Per-sample loss (1/(2p)) E||y_i - A_i x||^2. Equivalent to the plain loss
  // with A_i / sqrt(p) and sigma / sqrt(p).
  bool normalize = false;
  std::uint64_t seed = 0;
};

class QuadraticProblem final : public Problem {
 public:
  // Builds the family from explicit designs A_i (p x d) and centers u_i.
  QuadraticProblem(std::vector<Matrix> designs, std::vector<Vector> centers, double c,
                   double sigma)
      : a_(std::move(designs)), u_(std::move(centers)), c_(c), sigma_(sigma) {
    if (a_.empty() || a_.size() != u_.size()) throw InvalidInput("need one center per design");
    if (!(c_ > 0.0)) throw InvalidInput("heterogeneity divisor c must be positive");
    if (sigma_ < 0.0) throw InvalidInput("sigma must be nonnegative");
    const auto dd = a_.front().cols();
    Matrix hsum = Matrix::Zero(dd, dd);
    Vector rhs = Vector::Zero(dd);
    for (std::size_t i = 0; i < a_.size(); ++i) {
      if (a_[i].cols() != dd || u_[i].size() != dd) throw InvalidInput("inconsistent dimensions");
      h_.push_back(a_[i].transpose() * a_[i]);
      hsum += h_.back();
      rhs += h_.back() * u_[i];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(hsum);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    condition_ = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(condition_ <= 1e12)) throw InvalidInput("sum of A_i^T A_i is numerically singular");
    mu_ = lo / static_cast<double>(a_.size());
    x_star_ = es.eigenvectors() *
              (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * rhs));
    for (std::size_t i = 0; i < a_.size(); ++i) {
      x_local_.push_back(x_star_ + (u_[i] - x_star_) / c_);
      L_ = std::max(L_, Eigen::SelfAdjointEigenSolver<Matrix>(h_[i], Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .maxCoeff());
      sigma_sq_ = std::max(sigma_sq_, sigma_ * sigma_ * h_[i].trace());
    }
  }

  ProblemKind kind() const override { return ProblemKind::kQuadratic; }
  std::size_t n() const override { return a_.size(); }
  std::size_t d() const override { return static_cast<std::size_t>(a_.front().cols()); }
  std::size_t samples() const { return static_cast<std::size_t>(a_.front().rows()); }

  double local_value(std::size_t i, const Vector& x) const override {
    return 0.5 * (a_[i] * (x - x_local_[i])).squaredNorm();
  }
  Vector full_gradient(std::size_t i, const Vector& x) const override {
    return h_[i] * (x - x_local_[i]);
  }
  Vector gradient_noise(std::size_t i, RngStream& rng) const override {
    const auto p = a_[i].rows();
    if (sigma_ == 0.0) return Vector::Zero(a_[i].cols());
    const Vector eps = detail::gaussian_vector(p, rng, sigma_);
    return -(a_[i].transpose() * eps);
  }

  double smoothness() const override { return L_; }
  double strong_convexity() const override { return mu_; }
  double noise_variance_bound() const override { return sigma_sq_; }

  const Vector& x_star() const { return x_star_; }
  const Vector& x_local_star(std::size_t i) const { return x_local_[i]; }
  const Matrix& design(std::size_t i) const { return a_[i]; }
  const Matrix& hessian(std::size_t i) const { return h_[i]; }
  const Vector& center(std::size_t i) const { return u_[i]; }
  double c() const { return c_; }
  double sigma() const { return sigma_; }
  double condition_number() const { return condition_; }
  std::size_t regenerations() const { return regenerations_; }
  void set_regenerations(std::size_t r) { regenerations_ = r; }

  void dump(std::ostream& os) const override {
    detail::Dump dmp;
    dmp.header = {{"kind", "quadratic"},
                  {"n", std::to_string(n())},
                  {"d", std::to_string(d())},
                  {"p", std::to_string(samples())},
                  {"c", csv::format_double(c_)},
                  {"sigma", csv::format_double(sigma_)}};
    Matrix centers(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(d()));
    for (std::size_t i = 0; i < n(); ++i) {
      dmp.blocks["A " + std::to_string(i)] = a_[i];
      centers.row(static_cast<Eigen::Index>(i)) = u_[i].transpose();
    }
    dmp.blocks["u"] = centers;
    dmp.write(os);
  }

 protected:
  ReferenceSolution solve_reference() const override {
    const double gn = gradient(x_star_).norm();
    return {x_star_, value(x_star_), gn, "closed_form"};
  }

 private:
  std::vector<Matrix> a_;
  std::vector<Vector> u_;
  std::vector<Matrix> h_;
  std::vector<Vector> x_local_;
  Vector x_star_;
  double c_;
  double sigma_;
  double L_ = 0.0;
  double mu_ = 0.0;
  double sigma_sq_ = 0.0;
  double condition_ = 0.0;
  std::size_t regenerations_ = 0;
};

// Draws A_i and u_i i.i.d. standard normal. A numerically singular design is
// redrawn from the next substream; the count is kept on the problem.
inline QuadraticProblem gen_quadratic(const QuadraticParams& prm) {
  if (prm.n == 0 || prm.d == 0) throw InvalidInput("n and d must be positive");
  if (prm.p < prm.d) throw InvalidInput("gen_quadratic requires p >= d");
  if (!(prm.c > 0.0)) throw InvalidInput("heterogeneity divisor c must be positive");
  if (prm.sigma < 0.0) throw InvalidInput("sigma must be nonnegative");
  constexpr std::size_t kMaxAttempts = 64;
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<Matrix> a;
    std::vector<Vector> u;
    for (std::size_t i = 0; i < prm.n; ++i) {
      RngStream design(prm.seed, StreamTag::kDesign, i, attempt);
      RngStream center(prm.seed, StreamTag::kCenters, i, attempt);
      a.push_back(detail::gaussian_matrix(static_cast<Eigen::Index>(prm.p),
                                          static_cast<Eigen::Index>(prm.d), design));
      if (prm.normalize) a.back() /= std::sqrt(static_cast<double>(prm.p));
      u.push_back(detail::gaussian_vector(static_cast<Eigen::Index>(prm.d), center));
    }
    try {
      const double sigma =
          prm.normalize ? prm.sigma / std::sqrt(static_cast<double>(prm.p)) : prm.sigma;
      QuadraticProblem q(std::move(a), std::move(u), prm.c, sigma);
      q.set_regenerations(attempt);
      return q;
    } catch (const InvalidInput&) {
      continue;
    }
  }
  throw InvalidInput("could not draw a nonsingular quadratic design");
}

// ---------------------------------------------------------------------------
// l2-regularized logistic regression with additive Gaussian gradient noise.

struct LogisticParams {
  std::size_t n = 32;
  std::size_t d = 20;
  std::size_t m = 2000;
  double sigma_h = 0.0;  // spread of local generating parameters
  double mu_reg = 0.01;
  double sigma_s = 0.1;  // additive gradient noise std
  double base = 1.0;     // x0 = base * (1, ..., 1)
  std::uint64_t seed = 0;
};

class LogisticProblem final : public Problem {
 public:
  LogisticProblem(std::vector<Matrix> covariates, std::vector<Vector> labels, double mu_reg,
                  double sigma_s, double sigma_h = 0.0)
      : u_(std::move(covariates)),
        v_(std::move(labels)),
        mu_reg_(mu_reg),
        sigma_s_(sigma_s),
        sigma_h_(sigma_h) {
    if (u_.empty() || u_.size() != v_.size()) throw InvalidInput("need one label vector per agent");
    if (!(mu_reg_ > 0.0)) throw InvalidInput("mu_reg must be positive");
    if (sigma_s_ < 0.0) throw InvalidInput("sigma_s must be nonnegative");
    double worst = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i) {
      if (u_[i].rows() == 0) throw InvalidInput("logistic needs m >= 1");
      if (u_[i].rows() != v_[i].size() || u_[i].cols() != u_.front().cols())
        throw InvalidInput("inconsistent logistic dimensions");
      for (Eigen::Index j = 0; j < v_[i].size(); ++j)
        if (v_[i](j) != 1.0 && v_[i](j) != -1.0) throw InvalidInput("labels must be +/-1");
      worst = std::max(worst, detail::op_norm_sq(u_[i]) / (4.0 * static_cast<double>(u_[i].rows())));
    }
    L_ = mu_reg_ + worst;
  }

  ProblemKind kind() const override { return ProblemKind::kLogistic; }
  std::size_t n() const override { return u_.size(); }
  std::size_t d() const override { return static_cast<std::size_t>(u_.front().cols()); }
  std::size_t samples() const { return static_cast<std::size_t>(u_.front().rows()); }

  double local_value(std::size_t i, const Vector& x) const override {
    const Vector margins = v_[i].cwiseProduct(u_[i] * x);
    double s = 0.0;
    for (Eigen::Index j = 0; j < margins.size(); ++j) s += detail::softplus(-margins(j));
    return s / static_cast<double>(margins.size()) + 0.5 * mu_reg_ * x.squaredNorm();
  }
  Vector full_gradient(std::size_t i, const Vector& x) const override {
    const Vector margins = v_[i].cwiseProduct(u_[i] * x);
    Vector w(margins.size());
    for (Eigen::Index j = 0; j < margins.size(); ++j)
      w(j) = -v_[i](j) * detail::inv_one_plus_exp(margins(j));
    return u_[i].transpose() * w / static_cast<double>(margins.size()) + mu_reg_ * x;
  }
  Vector gradient_noise(std::size_t, RngStream& rng) const override {
    if (sigma_s_ == 0.0) return Vector::Zero(static_cast<Eigen::Index>(d()));
    return detail::gaussian_vector(static_cast<Eigen::Index>(d()), rng, sigma_s_);
  }

  double smoothness() const override { return L_; }
  double strong_convexity() const override { return mu_reg_; }
  double noise_variance_bound() const override {
    return static_cast<double>(d()) * sigma_s_ * sigma_s_;
  }

  const Matrix& covariates(std::size_t i) const { return u_[i]; }
  const Vector& labels(std::size_t i) const { return v_[i]; }
  double mu_reg() const { return mu_reg_; }
  double sigma_s() const { return sigma_s_; }

  void dump(std::ostream& os) const override {
    detail::Dump dmp;
    dmp.header = {{"kind", "logistic"},
                  {"n", std::to_string(n())},
                  {"d", std::to_string(d())},
                  {"m", std::to_string(samples())},
                  {"mu_reg", csv::format_double(mu_reg_)},
                  {"sigma_s", csv::format_double(sigma_s_)},
                  {"sigma_h", csv::format_double(sigma_h_)}};
    for (std::size_t i = 0; i < n(); ++i) {
      dmp.blocks["U " + std::to_string(i)] = u_[i];
      dmp.blocks["V " + std::to_string(i)] = v_[i];
    }
    dmp.write(os);
  }

 protected:
  ReferenceSolution solve_reference() const override {
    return descend(Vector::Zero(static_cast<Eigen::Index>(d())), 1e-10, 200000, "reference_solve");
  }

 private:
  std::vector<Matrix> u_;
  std::vector<Vector> v_;
  double mu_reg_;
  double sigma_s_;
  double sigma_h_;
  double L_ = 0.0;
};

inline LogisticProblem gen_logistic(const LogisticParams& prm) {
  if (prm.n == 0 || prm.d == 0) throw InvalidInput("n and d must be positive");
  if (prm.m < 1) throw InvalidInput("gen_logistic requires m >= 1");
  if (prm.sigma_h < 0.0) throw InvalidInput("sigma_h must be nonnegative");
  const auto D = static_cast<Eigen::Index>(prm.d);
  const auto M = static_cast<Eigen::Index>(prm.m);
  std::vector<Matrix> u;
  std::vector<Vector> v;
  for (std::size_t i = 0; i < prm.n; ++i) {
    RngStream centers(prm.seed, StreamTag::kCenters, i);
    RngStream design(prm.seed, StreamTag::kDesign, i);
    RngStream labels(prm.seed, StreamTag::kLabels, i);
    const Vector local = Vector::Constant(D, prm.base) + detail::gaussian_vector(D, centers, prm.sigma_h);
    Matrix ui = detail::gaussian_matrix(M, D, design);
    Vector vi(M);
    for (Eigen::Index j = 0; j < M; ++j) {
      const double prob = 1.0 / (1.0 + std::exp(-ui.row(j).dot(local)));
      vi(j) = labels.uniform() <= prob ? 1.0 : -1.0;
    }
    u.push_back(std::move(ui));
    v.push_back(std::move(vi));
  }
  return LogisticProblem(std::move(u), std::move(v), prm.mu_reg, prm.sigma_s, prm.sigma_h);
}

// ---------------------------------------------------------------------------
// Non-convex robust regression: f_i(x) = (1/m) sum_j rho(u_ij^T x - b_ij) with
// the Welsch loss rho(r) = 1 - exp(-r^2/2). |rho''| <= 1 gives
// L = max_i ||U_i||_op^2 / m.

struct WelschParams {
  std::size_t n = 8;
  std::size_t d = 5;
  std::size_t m = 50;
  double sigma_h = 0.5;   // spread of local centers around (1, ..., 1)
  double noise = 0.1;     // target noise std
  double sigma_s = 0.05;  // additive gradient noise std
  std::uint64_t seed = 0;
};

class WelschProblem final : public Problem {
 public:
  WelschProblem(std::vector<Matrix> covariates, std::vector<Vector> targets, double sigma_s)
      : u_(std::move(covariates)), b_(std::move(targets)), sigma_s_(sigma_s) {
    if (u_.empty() || u_.size() != b_.size()) throw InvalidInput("need one target vector per agent");
    if (sigma_s_ < 0.0) throw InvalidInput("sigma_s must be nonnegative");
    for (std::size_t i = 0; i < u_.size(); ++i) {
      if (u_[i].rows() == 0 || u_[i].rows() != b_[i].size() || u_[i].cols() != u_.front().cols())
        throw InvalidInput("inconsistent welsch dimensions");
      L_ = std::max(L_, detail::op_norm_sq(u_[i]) / static_cast<double>(u_[i].rows()));
    }
  }

  ProblemKind kind() const override { return ProblemKind::kWelsch; }
  std::size_t n() const override { return u_.size(); }
  std::size_t d() const override { return static_cast<std::size_t>(u_.front().cols()); }
  std::size_t samples() const { return static_cast<std::size_t>(u_.front().rows()); }

  double local_value(std::size_t i, const Vector& x) const override {
    const Vector r = u_[i] * x - b_[i];
    return (1.0 - (-0.5 * r.array().square()).exp()).mean();
  }
  Vector full_gradient(std::size_t i, const Vector& x) const override {
    const Vector r = u_[i] * x - b_[i];
    const Vector w = (r.array() * (-0.5 * r.array().square()).exp()).matrix();
    return u_[i].transpose() * w / static_cast<double>(r.size());
  }
  Vector gradient_noise(std::size_t, RngStream& rng) const override {
    if (sigma_s_ == 0.0) return Vector::Zero(static_cast<Eigen::Index>(d()));
    return detail::gaussian_vector(static_cast<Eigen::Index>(d()), rng, sigma_s_);
  }

  double smoothness() const override { return L_; }
  double strong_convexity() const override { return 0.0; }
  double noise_variance_bound() const override {
    return static_cast<double>(d()) * sigma_s_ * sigma_s_;
  }
  // The loss is nonnegative, so 0 is the lower bound used for f*.
  bool has_exact_optimum() const override { return false; }

  void dump(std::ostream& os) const override {
    detail::Dump dmp;
    dmp.header = {{"kind", "welsch"},
                  {"n", std::to_string(n())},
                  {"d", std::to_string(d())},
                  {"m", std::to_string(samples())},
                  {"sigma_s", csv::format_double(sigma_s_)}};
    for (std::size_t i = 0; i < n(); ++i) {
      dmp.blocks["U " + std::to_string(i)] = u_[i];
      dmp.blocks["B " + std::to_string(i)] = b_[i];
    }
    dmp.write(os);
  }

 protected:
  ReferenceSolution solve_reference() const override {
    return descend(Vector::Zero(static_cast<Eigen::Index>(d())), 1e-10, 200000, "stationary_point");
  }

 private:
  std::vector<Matrix> u_;
  std::vector<Vector> b_;
  double sigma_s_;
  double L_ = 0.0;
};

inline WelschProblem gen_welsch(const WelschParams& prm) {
  if (prm.n == 0 || prm.d == 0 || prm.m == 0) throw InvalidInput("n, d, m must be positive");
  const auto D = static_cast<Eigen::Index>(prm.d);
  const auto M = static_cast<Eigen::Index>(prm.m);
  std::vector<Matrix> u;
  std::vector<Vector> b;
  for (std::size_t i = 0; i < prm.n; ++i) {
    RngStream centers(prm.seed, StreamTag::kCenters, i);
    RngStream design(prm.seed, StreamTag::kDesign, i);
    RngStream targets(prm.seed, StreamTag::kLabels, i);
    const Vector local = Vector::Ones(D) + detail::gaussian_vector(D, centers, prm.sigma_h);
    Matrix ui = detail::gaussian_matrix(M, D, design);
    Vector bi = ui * local + detail::gaussian_vector(M, targets, prm.noise);
    u.push_back(std::move(ui));
    b.push_back(std::move(bi));
  }
  return WelschProblem(std::move(u), std::move(b), prm.sigma_s);
}

// ---------------------------------------------------------------------------

inline std::unique_ptr<Problem> load_problem(std::istream& is) {
  const auto dmp = detail::Dump::read(is);
  const auto& kind = dmp.get("kind");
  const auto n = static_cast<std::size_t>(dmp.num("n"));
  auto col = [](const Matrix& m) -> Vector {
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw InvalidInput("expected a vector block");
  };
  if (kind == "quadratic") {
    std::vector<Matrix> a;
    std::vector<Vector> u;
    const Matrix& centers = dmp.block("u");
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(dmp.block("A " + std::to_string(i)));
      u.push_back(centers.row(static_cast<Eigen::Index>(i)).transpose());
    }
    return std::make_unique<QuadraticProblem>(std::move(a), std::move(u), dmp.num("c"),
                                              dmp.num("sigma"));
  }
  if (kind == "logistic") {
    std::vector<Matrix> u;
    std::vector<Vector> v;
    for (std::size_t i = 0; i < n; ++i) {
      u.push_back(dmp.block("U " + std::to_string(i)));
      v.push_back(col(dmp.block("V " + std::to_string(i))));
    }
    return std::make_unique<LogisticProblem>(std::move(u), std::move(v), dmp.num("mu_reg"),
                                             dmp.num("sigma_s"), dmp.num("sigma_h"));
  }
  if (kind == "welsch") {
    std::vector<Matrix> u;
    std::vector<Vector> b;
    for (std::size_t i = 0; i < n; ++i) {
      u.push_back(dmp.block("U " + std::to_string(i)));
      b.push_back(col(dmp.block("B " + std::to_string(i))));
    }
    return std::make_unique<WelschProblem>(std::move(u), std::move(b), dmp.num("sigma_s"));
  }
  throw InvalidInput("unknown problem kind in dump: " + kind);
}

inline std::unique_ptr<Problem> load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return load_problem(in);
}

}  // namespace decent_opt
