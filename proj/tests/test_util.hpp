#pragma once

#include "sparseot/core.hpp"

#include <random>

namespace testutil {

using sparseot::Index;
using sparseot::Matrix;
using sparseot::OTProblem;
using sparseot::Regularizer;
using sparseot::Vector;

inline Vector uniform_vector(std::mt19937_64& rng, Index m, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(m);
  for (Index i = 0; i < m; ++i) v[i] = u(rng);
  return v;
}

/// Strictly positive histogram with total mass `mass`.
inline Vector random_histogram(std::mt19937_64& rng, Index m, double mass = 1.0) {
  Vector h = uniform_vector(rng, m, 0.2, 1.2);
  return h * (mass / h.sum());
}

inline OTProblem random_problem(std::mt19937_64& rng, Index m, Index n, const Regularizer& reg) {
  OTProblem p;
  p.a = random_histogram(rng, m);
  p.b = random_histogram(rng, n);
  p.C = Matrix(m, n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) p.C(i, j) = u(rng);
  }
  p.reg = reg;
  return p;
}

/// Smallest gap between two entries of s.
inline double min_gap(const Vector& s) {
  double g = sparseot::kInf;
  for (Index i = 0; i < s.size(); ++i) {
    for (Index j = i + 1; j < s.size(); ++j) g = std::min(g, std::abs(s[i] - s[j]));
  }
  return g;
}

inline int random_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace testutil
