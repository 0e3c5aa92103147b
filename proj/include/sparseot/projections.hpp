#pragma once

// Euclidean projections onto the nonnegative orthant, the scaled simplex
// b * Delta^m, and their intersections with B_k (vectors with at most k
// nonzeros). The k-sparse projections are exact: keep the top-k entries, then
// apply the convex projection to them.

#include "sparseot/core.hpp"

#include <span>

namespace sparseot {

inline Vector project_nonneg(const VectorRef& s) { return s.cwiseMax(0.0); }

namespace detail {

// Threshold for values already sorted in decreasing order.
inline double find_tau_sorted(std::span<const double> sorted_desc, double b) {
  double cumsum = 0.0;
  double tau = 0.0;
  for (size_t j = 0; j < sorted_desc.size(); ++j) {
    cumsum += sorted_desc[j];
    const double candidate = (cumsum - b) / static_cast<double>(j + 1);
    if (sorted_desc[j] - candidate > 0.0) tau = candidate;
    else break;
  }
  return tau;
}

}  // namespace detail

/// The unique tau with sum_i [s_i - tau]_+ = b, for b > 0.
inline double find_tau(const VectorRef& s, double b) {
  if (!(b > 0.0)) throw ProblemError("find_tau: b must be positive");
  if (s.size() == 0) throw ProblemError("find_tau: empty input");
  std::vector<double> sorted(s.data(), s.data() + s.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return detail::find_tau_sorted(sorted, b);
}

inline Vector project_scaled_simplex(const VectorRef& s, double b) {
  const double tau = find_tau(s, b);
  return (s.array() - tau).cwiseMax(0.0).matrix();
}

/// Projection onto R^m_+ intersected with B_k: [topk(s)]_+.
inline Vector ksparse_project_nonneg(const VectorRef& s, int k) {
  const auto keep = topk_indices(s, k);
  Vector t = Vector::Zero(s.size());
  for (Index i : keep) t[i] = std::max(s[i], 0.0);
  return t;
}

/// Result of a top-k sparsemax, with the kept support and threshold exposed
/// for callers that need them (conjugate values, tie detection).
struct SparseSimplexProjection {
  Vector t;
  double tau = 0.0;
  std::vector<Index> kept;  // top-k indices, decreasing value order
};

inline SparseSimplexProjection ksparse_project_simplex_full(const VectorRef& s, double b, int k) {
  if (!(b > 0.0)) throw ProblemError("ksparse_project_simplex: b must be positive");
  SparseSimplexProjection out;
  out.kept = topk_indices(s, k);
  std::vector<double> vals;
  vals.reserve(out.kept.size());
  for (Index i : out.kept) vals.push_back(s[i]);
  out.tau = detail::find_tau_sorted(vals, b);
  out.t = Vector::Zero(s.size());
  for (Index i : out.kept) out.t[i] = std::max(s[i] - out.tau, 0.0);
  return out;
}

/// Projection onto b * Delta^m intersected with B_k (top-k sparsemax).
inline Vector ksparse_project_simplex(const VectorRef& s, double b, int k) {
  return ksparse_project_simplex_full(s, b, k).t;
}

}  // namespace sparseot
