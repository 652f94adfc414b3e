#pragma once

#include <vector>

#include "decent_opt/problems.hpp"
#include "decent_opt/topology.hpp"

namespace fixtures {

using decent_opt::Matrix;
using decent_opt::Vector;

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Two agents, d = 1, A_i = [1], u = {0, 2}: x* = 1, local stars {0, 2}.
inline decent_opt::QuadraticProblem hand_problem(double c = 1.0, double sigma = 0.0) {
  return decent_opt::QuadraticProblem({mat({{1.0}}), mat({{1.0}})}, {vec({0.0}), vec({2.0})}, c, sigma);
}

inline decent_opt::MixingMatrix hand_mixing() {
  return decent_opt::lazy_transform(decent_opt::build_complete(2));
}

// Four agents, d = 3, p = 4, explicit designs; used with the lazy ring(4).
inline decent_opt::QuadraticProblem explicit_problem(double sigma = 0.0) {
  std::vector<Matrix> a = {
      mat({{1, 0, 1}, {0, 2, 0}, {1, 1, 0}, {0, 0, 1}}),
      mat({{2, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}}),
      mat({{1, 0, 0}, {1, 1, 0}, {0, 1, 1}, {0, 0, 2}}),
      mat({{1, 2, 0}, {0, 1, 1}, {1, 0, 1}, {0, 1, 0}}),
  };
  std::vector<Vector> u = {vec({1.0, -1.0, 0.5}), vec({-2.0, 0.0, 1.0}), vec({0.0, 3.0, -1.0}),
                           vec({1.5, 0.5, 2.0})};
  return decent_opt::QuadraticProblem(std::move(a), std::move(u), 2.0, sigma);
}

inline decent_opt::MixingMatrix explicit_mixing() {
  return decent_opt::lazy_transform(decent_opt::build_ring(4));
}

inline Vector explicit_x0() { return vec({0.5, -0.5, 1.0}); }

// Normalized Figure-1 quadratic (n = 32, d = 10, p = 20).
inline decent_opt::QuadraticProblem figure1(double c = 1.0, double sigma_sq = 0.05, std::uint64_t seed = 1) {
  decent_opt::QuadraticParams q;
  q.c = c;
  q.sigma = std::sqrt(sigma_sq);
  q.normalize = true;
  q.seed = seed;
  return decent_opt::gen_quadratic(q);
}

}  // namespace fixtures
