#pragma once

// Transportation plans from optimal potentials, plan statistics, and an
// opt-in least-squares marginal repair for tied columns, and least-norm
// superdifferential selection at tied optima.

#include "sparseot/conjugates.hpp"
#include "sparseot/core.hpp"
#include "sparseot/objectives.hpp"

#include <algorithm>
#include <string>

namespace sparseot {

/// Wraps dense entries into a TransportPlan: snaps |t_ij| <= 1e-12 to zero and
/// fills the nonzero counts and marginal violations against p.
inline TransportPlan make_plan(const OTProblem& p, Matrix entries, bool ties = false) {
  if (entries.rows() != p.rows() || entries.cols() != p.cols()) {
    throw ProblemError("plan: shape does not match the problem");
  }
  entries = (entries.array().abs() <= kNonzeroThreshold).select(0.0, entries);
  TransportPlan plan;
  plan.col_nnz.resize(static_cast<size_t>(entries.cols()));
  for (Index j = 0; j < entries.cols(); ++j) {
    plan.col_nnz[static_cast<size_t>(j)] = (entries.col(j).array() != 0.0).count();
  }
  plan.row_marginal_err = (entries.rowwise().sum() - p.a).cwiseAbs().maxCoeff();
  plan.col_marginal_err = (entries.colwise().sum().transpose() - p.b).cwiseAbs().maxCoeff();
  plan.ties = ties;
  plan.entries = std::move(entries);
  return plan;
}

/// t_j = grad conj_b(alpha - c_j). Columns sum to b_j by construction.
inline TransportPlan plan_from_semidual(const OTProblem& p, const VectorRef& alpha) {
  SemidualEval e = semidual_objective(p, alpha);
  return make_plan(p, std::move(e.plan), e.ties);
}

/// t_j = grad conj_plus(alpha + beta_j 1 - c_j). No column-sum guarantee.
inline TransportPlan plan_from_dual(const OTProblem& p, const VectorRef& alpha, const VectorRef& beta) {
  DualEval e = dual_objective(p, alpha, beta);
  return make_plan(p, std::move(e.plan), e.ties);
}

/// Semi-dual plan for SparsityConstrained problems that resolves ties toward
/// feasibility. Columns are filled in order; when rows within `tie_tol` of
/// the k-th largest score compete for the last support slots, rows with the
/// most unmet mass win (lowest index among equals). Every column still has at
/// most k nonzeros and sums to b_j. Other regularizers fall back to
/// plan_from_semidual.
inline TransportPlan plan_from_semidual_balanced(const OTProblem& p, const VectorRef& alpha, double tie_tol) {
  if (p.reg.kind != RegKind::SparsityConstrained) return plan_from_semidual(p, alpha);
  const Index m = p.rows();
  const Index n = p.cols();
  const int k = p.reg.k;
  Vector deficit = p.a;
  Matrix T = Matrix::Zero(m, n);
  bool ties = false;
  for (Index j = 0; j < n; ++j) {
    if (p.b[j] <= 0.0) continue;
    const Vector s = (alpha - p.C.col(j)) / p.reg.gamma;
    const auto order = topk_indices(s, k);
    const double kth = s[order.back()];
    std::vector<Index> support;
    std::vector<Index> tied;
    for (Index i = 0; i < m; ++i) {
      if (s[i] > kth + tie_tol) support.push_back(i);
      else if (s[i] >= kth - tie_tol) tied.push_back(i);
    }
    const auto free_slots = static_cast<size_t>(k) - support.size();
    if (tied.size() > free_slots) ties = true;
    std::stable_sort(tied.begin(), tied.end(), [&](Index x, Index y) { return deficit[x] > deficit[y]; });
    support.insert(support.end(), tied.begin(), tied.begin() + static_cast<std::ptrdiff_t>(free_slots));
    Vector sub(static_cast<Index>(support.size()));
    for (size_t q = 0; q < support.size(); ++q) sub[static_cast<Index>(q)] = s[support[q]];
    const Vector t = project_scaled_simplex(sub, p.b[j]);
    for (size_t q = 0; q < support.size(); ++q) {
      T(support[q], j) = t[static_cast<Index>(q)];
      deficit[support[q]] -= t[static_cast<Index>(q)];
    }
  }
  return make_plan(p, std::move(T), ties);
}

namespace detail {

// Maximizers of one column's conjugate near a tie: u plus the value v on
// any free_slots of the tied rows. Their convex hull is u + v w with w in
// [0,1]^|tied| and sum w = free_slots, so no support needs enumerating. An
// empty tied list means the maximizer u is unique.
struct ColumnFace {
  Vector u;
  std::vector<Index> tied;
  double v = 0.0;
  Index free_slots = 0;
};

// s is already divided by gamma. simplex selects conj_b with mass b,
// otherwise conj_plus. Only None (simplex) and SparsityConstrained reach here.
inline ColumnFace column_face(const Regularizer& reg, const Vector& s, double b, bool simplex, double window) {
  const Index m = s.size();
  const double w = window * std::max(1.0, s.cwiseAbs().maxCoeff());
  ColumnFace f;
  f.u = Vector::Zero(m);
  if (reg.kind == RegKind::None) {
    const double mx = s.maxCoeff();
    for (Index i = 0; i < m; ++i) {
      if (s[i] >= mx - w) f.tied.push_back(i);
    }
    if (f.tied.size() == 1) {
      f.u[f.tied.front()] = b;
      f.tied.clear();
    } else {
      f.v = b;
      f.free_slots = 1;
    }
    return f;
  }
  const auto order = topk_indices(s, reg.k);
  const double kth = s[order.back()];
  std::vector<Index> upper;
  std::vector<Index> tied;
  for (Index i = 0; i < m; ++i) {
    if (s[i] > kth + w) upper.push_back(i);
    else if (s[i] >= kth - w) tied.push_back(i);
  }
  const auto free_slots = static_cast<Index>(reg.k) - static_cast<Index>(upper.size());
  std::vector<Index> support = upper;
  support.insert(support.end(), tied.begin(), tied.begin() + std::min<Index>(free_slots, static_cast<Index>(tied.size())));
  Vector sub(static_cast<Index>(support.size()));
  for (size_t q = 0; q < support.size(); ++q) sub[static_cast<Index>(q)] = s[support[q]];
  const Vector vals = simplex ? project_scaled_simplex(sub, b) : Vector(sub.cwiseMax(0.0));
  const auto nu = static_cast<Index>(upper.size());
  const double v = vals.size() > nu ? vals.tail(vals.size() - nu).mean() : 0.0;
  if (static_cast<Index>(tied.size()) <= free_slots || v <= 0.0) {
    for (size_t q = 0; q < support.size(); ++q) f.u[support[q]] = vals[static_cast<Index>(q)];
    return f;
  }
  for (Index q = 0; q < nu; ++q) f.u[upper[static_cast<size_t>(q)]] = vals[q];
  f.tied = std::move(tied);
  f.v = v;
  f.free_slots = free_slots;
  return f;
}

// Fills T with the hull points of the faces closest to the row target a,
// i.e. minimizing |a - T 1|. Mass y on each column's tied rows lives in
// {0 <= y <= v, sum y = v free_slots}; starting from an even spread, mass
// moves between the pair of rows of one column that violates optimality
// most, by the exact minimizing amount, until the rows receiving mass and
// the rows giving it agree on the residual.
inline void least_norm_fill(const std::vector<ColumnFace>& faces, const Vector& a, Matrix& T) {
  const Index n = T.cols();
  for (Index j = 0; j < n; ++j) T.col(j) = faces[static_cast<size_t>(j)].u;
  std::vector<Index> kinked;
  for (Index j = 0; j < n; ++j) {
    const ColumnFace& f = faces[static_cast<size_t>(j)];
    if (f.tied.empty()) continue;
    kinked.push_back(j);
    const double share = f.v * static_cast<double>(f.free_slots) / static_cast<double>(f.tied.size());
    for (Index i : f.tied) T(i, j) += share;
  }
  if (kinked.empty()) return;
  Vector r = a - T.rowwise().sum();
  const double stop = 1e-15 * std::max(1.0, a.cwiseAbs().maxCoeff());
  for (long it = 0; it < 1000000; ++it) {
    double worst = stop;
    Index col = -1;
    Index up = -1;
    Index down = -1;
    for (Index j : kinked) {
      const ColumnFace& f = faces[static_cast<size_t>(j)];
      Index hi = -1;
      Index lo = -1;
      for (Index i : f.tied) {
        const double y = T(i, j) - f.u[i];
        if (y < f.v && (hi < 0 || r[i] > r[hi])) hi = i;
        if (y > 0.0 && (lo < 0 || r[i] < r[lo])) lo = i;
      }
      if (hi >= 0 && lo >= 0 && r[hi] - r[lo] > worst) {
        worst = r[hi] - r[lo];
        col = j;
        up = hi;
        down = lo;
      }
    }
    if (col < 0) break;
    const ColumnFace& f = faces[static_cast<size_t>(col)];
    const double delta =
        std::min({0.5 * worst, f.v - (T(up, col) - f.u[up]), T(down, col) - f.u[down]});
    T(up, col) += delta;
    T(down, col) -= delta;
    r[up] -= delta;
    r[down] += delta;
  }
}

inline Index face_size(const std::vector<ColumnFace>& faces) {
  Index total = 0;
  for (const auto& f : faces) total += static_cast<Index>(f.tied.size());
  return total;
}

}  // namespace detail

/// Superdifferential element of least norm over the tied supports.
struct FaceSelection {
  Vector subgradient;  // a - T 1, followed by b - T^T 1 for the dual
  TransportPlan plan;  // columns are convex combinations of tied maximizers
  Index tied_columns = 0;
  Index tied_entries = 0;
};

/// At a point where columns have tied supports the semi-dual is not
/// differentiable, and its superdifferential is the set of a - sum_j t_j
/// with each t_j in the convex hull of the maximizers over the tied
/// supports. Rows count as tied when their scores lie within
/// window * max(1, |s|_inf) of the k-th largest. Only unregularized and
/// SparsityConstrained problems with k < m have ties; other problems get the
/// ordinary gradient.
inline FaceSelection semidual_face(const OTProblem& p, const VectorRef& alpha, double window) {
  const Index m = p.rows();
  const Index n = p.cols();
  const bool none = p.reg.kind == RegKind::None;
  FaceSelection out;
  if (!none && (p.reg.kind != RegKind::SparsityConstrained || p.reg.k >= m)) {
    out.plan = plan_from_semidual(p, alpha);
    out.subgradient = p.a - out.plan.entries.rowwise().sum();
    return out;
  }
  const double g = none ? 1.0 : p.reg.gamma;
  std::vector<detail::ColumnFace> faces(static_cast<size_t>(n));
  for (Index j = 0; j < n; ++j) {
    if (p.b[j] <= 0.0) {
      faces[static_cast<size_t>(j)].u = Vector::Zero(m);
      continue;
    }
    faces[static_cast<size_t>(j)] = detail::column_face(p.reg, (alpha - p.C.col(j)) / g, p.b[j], true, window);
    out.tied_columns += !faces[static_cast<size_t>(j)].tied.empty();
  }
  out.tied_entries = detail::face_size(faces);
  Matrix T(m, n);
  detail::least_norm_fill(faces, p.a, T);
  out.subgradient = p.a - T.rowwise().sum();
  out.plan = make_plan(p, std::move(T), out.tied_columns > 0);
  return out;
}

/// The same for the dual. Column sums are constant over each face, so only
/// the row part of the supergradient is minimized.
inline FaceSelection dual_face(const OTProblem& p, const VectorRef& alpha, const VectorRef& beta, double window) {
  const Index m = p.rows();
  const Index n = p.cols();
  FaceSelection out;
  Matrix T(m, n);
  if (p.reg.kind != RegKind::SparsityConstrained || p.reg.k >= m) {
    out.plan = plan_from_dual(p, alpha, beta);
    T = out.plan.entries;
  } else {
    std::vector<detail::ColumnFace> faces(static_cast<size_t>(n));
    for (Index j = 0; j < n; ++j) {
      faces[static_cast<size_t>(j)] =
          detail::column_face(p.reg, (alpha.array() + beta[j] - p.C.col(j).array()).matrix() / p.reg.gamma, 0.0,
                              false, window);
      out.tied_columns += !faces[static_cast<size_t>(j)].tied.empty();
    }
    out.tied_entries = detail::face_size(faces);
    detail::least_norm_fill(faces, p.a, T);
    out.plan = make_plan(p, T, out.tied_columns > 0);
  }
  out.subgradient.resize(m + n);
  out.subgradient << p.a - T.rowwise().sum(), p.b - T.colwise().sum().transpose();
  return out;
}

/// Opt-in plan for tied optima: the convex combination of tied maximizers
/// that best meets the row marginals. Columns stay exact; a column mixing
/// several supports can have more than k nonzeros, and the plan is flagged.
inline TransportPlan plan_from_semidual_face(const OTProblem& p, const VectorRef& alpha, double window = 1e-9) {
  return semidual_face(p, alpha, window).plan;
}

struct PlanStats {
  double cost = 0.0;
  double reg_value = 0.0;
  double primal_value = 0.0;
  Index max_col_nnz = 0;
  double row_marginal_err = 0.0;
  double col_marginal_err = 0.0;
};

/// <T, C> + sum_j Omega(t_j). reg_value is +inf when a column violates the
/// cardinality constraint.
inline PlanStats plan_stats(const OTProblem& p, const TransportPlan& plan) {
  const Matrix& T = plan.entries;
  if (T.rows() != p.rows() || T.cols() != p.cols()) {
    throw ProblemError("plan_stats: shape does not match the problem");
  }
  PlanStats st;
  st.cost = (T.array() * p.C.array()).sum();
  for (Index j = 0; j < T.cols(); ++j) st.reg_value += regularizer_value(p.reg, T.col(j));
  st.primal_value = st.cost + st.reg_value;
  st.max_col_nnz = plan.max_col_nnz();
  st.row_marginal_err = plan.row_marginal_err;
  st.col_marginal_err = plan.col_marginal_err;
  return st;
}

struct RepairResult {
  TransportPlan plan;
  bool repaired = false;
  std::string diagnostic;
};

/// Adjusts the nonzero entries of T, support held fixed, to the
/// minimum-norm correction satisfying both marginals. Negative entries are
/// clipped and the correction re-applied. When no nonnegative solution on
/// the support is found, the input plan is returned with a diagnostic.
inline RepairResult repair_marginals(const OTProblem& p, const TransportPlan& plan) {
  constexpr double kFeasTol = 1e-10;
  constexpr int kMaxPasses = 100;
  const Index m = p.rows();
  const Index n = p.cols();

  RepairResult out;
  out.plan = plan;
  if (plan.row_marginal_err <= kFeasTol && plan.col_marginal_err <= kFeasTol) {
    out.diagnostic = "already feasible";
    return out;
  }

  std::vector<std::pair<Index, Index>> support;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      if (plan.entries(i, j) != 0.0) support.emplace_back(i, j);
    }
  }
  if (support.empty()) {
    out.diagnostic = "empty support: marginals cannot be satisfied";
    return out;
  }

  const auto nvar = static_cast<Index>(support.size());
  Matrix A = Matrix::Zero(m + n, nvar);
  Vector x(nvar);
  for (Index e = 0; e < nvar; ++e) {
    const auto [i, j] = support[static_cast<size_t>(e)];
    A(i, e) = 1.0;
    A(m + j, e) = 1.0;
    x[e] = plan.entries(i, j);
  }
  Vector rhs(m + n);
  rhs << p.a, p.b;

  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    const Vector resid = rhs - A * x;
    if (resid.cwiseAbs().maxCoeff() <= 1e-13) break;
    const Vector delta = cod.solve(resid);
    if ((rhs - A * (x + delta)).cwiseAbs().maxCoeff() > kFeasTol) {
      out.diagnostic = "marginal system is infeasible on the plan's support";
      return out;
    }
    x = (x + delta).cwiseMax(0.0);
  }
  if ((rhs - A * x).cwiseAbs().maxCoeff() > kFeasTol) {
    out.diagnostic = "no nonnegative solution found on the plan's support";
    return out;
  }

  Matrix T = Matrix::Zero(m, n);
  for (Index e = 0; e < nvar; ++e) {
    const auto [i, j] = support[static_cast<size_t>(e)];
    T(i, j) = x[e];
  }
  out.plan = make_plan(p, std::move(T), plan.ties);
  out.repaired = true;
  return out;
}

}  // namespace sparseot
