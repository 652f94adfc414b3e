#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <memory>
#include <mutex>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "decent_opt/csv.hpp"
#include "decent_opt/errors.hpp"

namespace decent_opt {

inline constexpr double kStochasticTol = 1e-12;
inline constexpr double kSpectralTol = 1e-10;

// Undirected communication graph. Self-loops are implicit.
class Topology {
 public:
  Topology(std::size_t n, std::set<std::pair<std::size_t, std::size_t>> edges)
      : n_(n), edges_(std::move(edges)) {
    for (const auto& [i, j] : edges_) {
      if (i >= n_ || j >= n_) throw InvalidTopology("edge endpoint out of range");
      if (!edges_.count({j, i})) throw InvalidTopology("edge set is not symmetric");
    }
  }

  static Topology ring(std::size_t n) {
    if (n < 3) throw InvalidTopology("ring needs n >= 3, got " + std::to_string(n));
    std::set<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      e.insert({i, j});
      e.insert({j, i});
    }
    return Topology(n, std::move(e));
  }

  static Topology complete(std::size_t n) {
    std::set<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) e.insert({i, j});
    return Topology(n, std::move(e));
  }

  // Off-diagonal support of a weight matrix, symmetrized.
  static Topology from_support(const Eigen::MatrixXd& w) {
    std::set<std::pair<std::size_t, std::size_t>> e;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        if (i != j && (w(i, j) != 0.0 || w(j, i) != 0.0))
          e.insert({static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
    return Topology(static_cast<std::size_t>(w.rows()), std::move(e));
  }

  std::size_t n() const noexcept { return n_; }
  const auto& edges() const noexcept { return edges_; }
  bool has_edge(std::size_t i, std::size_t j) const {
    return i == j || edges_.count({i, j}) > 0;
  }

  bool is_connected() const {
    if (n_ == 0) return false;
    std::vector<std::vector<std::size_t>> adj(n_);
    for (const auto& [i, j] : edges_) adj[i].push_back(j);
    std::vector<bool> seen(n_, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (auto v : adj[u])
        if (!seen[v]) {
          seen[v] = true;
          ++count;
          q.push(v);
        }
    }
    return count == n_;
  }

 private:
  std::size_t n_;
  std::set<std::pair<std::size_t, std::size_t>> edges_;
};

struct SpectralProfile {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
  double lambda = 0.0;           // ||W - 11^T/n||_op
  double min_eig = 0.0;
  double spectral_gap = 1.0;     // 1 - lambda

  // (I - W)^{1/2}; negative roundoff in 1 - eigenvalue is clamped to zero.
  Eigen::MatrixXd sqrt_laplacian() const {
    Eigen::VectorXd s = (1.0 - eigenvalues.array()).max(0.0).sqrt().matrix();
    return eigenvectors * s.asDiagonal() * eigenvectors.transpose();
  }
};

inline double symmetry_residual(const Eigen::MatrixXd& w) {
  return (w - w.transpose()).cwiseAbs().maxCoeff();
}

inline double stochasticity_residual(const Eigen::MatrixXd& w) {
  const double rows = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
  const double cols = (w.colwise().sum().array() - 1.0).abs().maxCoeff();
  return std::max(rows, cols);
}

// Dense symmetric doubly stochastic gossip matrix. Immutable; the spectral
// profile is computed on first request and shared between copies.
class MixingMatrix {
 public:
  explicit MixingMatrix(Eigen::MatrixXd w)
      : w_(std::move(w)), cache_(std::make_shared<Cache>()) {
    if (w_.rows() != w_.cols() || w_.rows() == 0)
      throw InvalidInput("mixing matrix must be square and non-empty");
  }

  std::size_t n() const noexcept { return static_cast<std::size_t>(w_.rows()); }
  const Eigen::MatrixXd& weights() const noexcept { return w_; }
  double operator()(std::size_t i, std::size_t j) const {
    return w_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  bool is_symmetric() const { return symmetry_residual(w_) <= kStochasticTol; }

  // Throws InvalidInput for non-symmetric matrices.
  const SpectralProfile& profile() const {
    std::call_once(cache_->once, [this] { cache_->profile = compute(); });
    if (!cache_->profile) throw InvalidInput("spectral profile requires a symmetric matrix");
    return *cache_->profile;
  }

  const Eigen::MatrixXd& sqrt_laplacian() const {
    std::call_once(cache_->sqrt_once, [this] { cache_->sqrt_l = profile().sqrt_laplacian(); });
    return cache_->sqrt_l;
  }

 private:
  struct Cache {
    std::once_flag once;
    std::once_flag sqrt_once;
    std::shared_ptr<const SpectralProfile> profile;
    Eigen::MatrixXd sqrt_l;
  };

  std::shared_ptr<const SpectralProfile> compute() const {
    if (!is_symmetric()) return nullptr;
    auto p = std::make_shared<SpectralProfile>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w_);
    p->eigenvalues = es.eigenvalues();
    p->eigenvectors = es.eigenvectors();
    p->min_eig = p->eigenvalues.minCoeff();
    const auto n = w_.rows();
    const Eigen::MatrixXd centered =
        w_ - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(centered, Eigen::EigenvaluesOnly);
    p->lambda = ec.eigenvalues().cwiseAbs().maxCoeff();
    p->spectral_gap = 1.0 - p->lambda;
    return p;
  }

  Eigen::MatrixXd w_;
  std::shared_ptr<Cache> cache_;
};

inline MixingMatrix build_ring(std::size_t n) {
  const auto topo = Topology::ring(n);
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    w(i, i) = 0.5;
    w(i, (i + 1) % N) = 0.25;
    w(i, (i + N - 1) % N) = 0.25;
  }
  return MixingMatrix(std::move(w));
}

inline MixingMatrix build_complete(std::size_t n) {
  if (n == 0) throw InvalidTopology("complete graph needs n >= 1");
  const auto N = static_cast<Eigen::Index>(n);
  return MixingMatrix(Eigen::MatrixXd::Constant(N, N, 1.0 / static_cast<double>(n)));
}

inline MixingMatrix lazy_transform(const MixingMatrix& w) {
  const auto& m = w.weights();
  if (symmetry_residual(m) > kStochasticTol || stochasticity_residual(m) > kStochasticTol)
    throw InvalidInput("lazy_transform requires a symmetric doubly stochastic matrix");
  Eigen::MatrixXd out = 0.5 * (m + Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  return MixingMatrix(std::move(out));
}

inline const SpectralProfile& spectral_profile(const MixingMatrix& w) { return w.profile(); }

struct ValidationCheck {
  std::string name;
  bool pass = false;
  double residual = 0.0;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
  const ValidationCheck& check(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw InvalidInput("no validation check named " + name);
  }
  // Lines of the form `check=<name> pass=<bool> residual=<float>`.
  std::string to_text() const {
    std::string out;
    for (const auto& c : checks)
      out += "check=" + c.name + " pass=" + (c.pass ? "true" : "false") +
             " residual=" + csv::format_double(c.residual) + "\n";
    return out;
  }
};

// Never throws on a well-formed square matrix; failures are reported.
inline ValidationReport validate(const MixingMatrix& w) {
  const auto& m = w.weights();
  ValidationReport r;
  const double min_diag = m.diagonal().minCoeff();
  r.checks.push_back({"positive_diagonal", min_diag > 0.0, min_diag});

  const double sym = symmetry_residual(m);
  const double sto = stochasticity_residual(m);
  r.checks.push_back({"symmetric_doubly_stochastic",
                      sym <= kStochasticTol && sto <= kStochasticTol, std::max(sym, sto)});

  if (sym <= kStochasticTol) {
    const auto& p = w.profile();
    r.checks.push_back({"positive_min_eigenvalue", p.min_eig > kSpectralTol, p.min_eig});
    r.checks.push_back({"connected", p.lambda < 1.0 - kStochasticTol, p.lambda});
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.checks.push_back({"positive_min_eigenvalue", false, nan});
    r.checks.push_back({"connected", false, nan});
  }
  return r;
}

inline MixingMatrix parse_mixing_matrix(std::istream& is) {
  MixingMatrix w(csv::parse_matrix(is));
  const auto report = validate(w);
  for (const auto* name : {"positive_diagonal", "symmetric_doubly_stochastic", "connected"}) {
    const auto& c = report.check(name);
    if (!c.pass)
      throw InvalidTopology("matrix file rejected: check " + c.name +
                            " failed (residual " + csv::format_double(c.residual) + ")");
  }
  return w;
}

inline MixingMatrix load_mixing_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return parse_mixing_matrix(in);
}

inline std::string to_csv(const MixingMatrix& w) { return csv::matrix_to_string(w.weights()); }

}  // namespace decent_opt
