#pragma once

// Brute-force references for the test suites. Nothing here calls into
// projections.hpp, conjugates.hpp or objectives.hpp: supports are enumerated,
// thresholds are found by bisection, and LPs are solved by basis enumeration
// or a textbook simplex. Sizes are guarded because every routine here is
// exponential or dense.

#include "sparseot/core.hpp"

#include <functional>
#include <optional>

namespace sparseot::oracle {

namespace detail {

// Calls fn(indices) for every size-k subset of {0..m-1}, lexicographic order.
template <class Fn>
void for_each_subset(int m, int k, Fn&& fn) {
  std::vector<Index> idx(static_cast<size_t>(k));
  std::function<void(int, int)> rec = [&](int pos, int start) {
    if (pos == k) {
      fn(idx);
      return;
    }
    for (int i = start; i <= m - (k - pos); ++i) {
      idx[static_cast<size_t>(pos)] = i;
      rec(pos + 1, i + 1);
    }
  };
  rec(0, 0);
}

// Projection of v onto b * simplex: bisection for the threshold, then the
// threshold is recomputed exactly from the detected support.
inline Vector simplex_projection_bisect(const Vector& v, double b) {
  double lo = v.minCoeff() - b;
  double hi = v.maxCoeff();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double mass = (v.array() - mid).cwiseMax(0.0).sum();
    if (mass > b) lo = mid;
    else hi = mid;
  }
  const double theta0 = 0.5 * (lo + hi);
  double sum = 0.0;
  int count = 0;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] > theta0) {
      sum += v[i];
      ++count;
    }
  }
  const double theta = count > 0 ? (sum - b) / count : theta0;
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

}  // namespace detail

/// Exact k-sparse projection by enumerating all size-k supports. With b
/// given, projects onto b * Delta^m intersected with B_k; otherwise onto
/// R^m_+ intersected with B_k. Among equally good supports the
/// lexicographically first wins.
inline Vector bf_ksparse_project(const Vector& s, std::optional<double> b, int k) {
  const auto m = static_cast<int>(s.size());
  if (m > 12) throw ProblemError("bf_ksparse_project: m too large for enumeration (m <= 12)");
  if (k < 1 || k > m) throw ProblemError("bf_ksparse_project: k out of range");
  Vector best;
  double best_obj = kInf;
  detail::for_each_subset(m, k, [&](const std::vector<Index>& support) {
    Vector sub(static_cast<Index>(support.size()));
    for (size_t q = 0; q < support.size(); ++q) sub[static_cast<Index>(q)] = s[support[q]];
    const Vector proj = b ? detail::simplex_projection_bisect(sub, *b) : Vector(sub.cwiseMax(0.0));
    Vector t = Vector::Zero(m);
    for (size_t q = 0; q < support.size(); ++q) t[support[q]] = proj[static_cast<Index>(q)];
    const double obj = (s - t).squaredNorm();
    if (best.size() == 0 || obj < best_obj - 1e-14 * std::max(1.0, best_obj)) {
      best_obj = obj;
      best = t;
    }
  });
  return best;
}

/// Conjugate value by enumeration (quadratic and sparsity-constrained),
/// one-dimensional root finding (negentropy), or directly (unregularized).
/// With b given this is the simplex-constrained conjugate, otherwise the
/// nonnegative-orthant one.
inline double bf_conjugate(const Regularizer& reg, const Vector& s, std::optional<double> b) {
  const auto m = static_cast<int>(s.size());
  if (m > 6) throw ProblemError("bf_conjugate: m too large (m <= 6)");
  const double g = reg.gamma;
  switch (reg.kind) {
    case RegKind::None:
      if (b) return *b * s.maxCoeff();
      return (s.array() > 0.0).any() ? kInf : 0.0;

    case RegKind::Quadratic:
    case RegKind::SparsityConstrained: {
      const int kmax = reg.kind == RegKind::Quadratic ? m : reg.k;
      double best = b ? -kInf : 0.0;  // t = 0 is feasible for the orthant
      for (int size = 1; size <= kmax; ++size) {
        detail::for_each_subset(m, size, [&](const std::vector<Index>& support) {
          double sum = 0.0;
          for (Index i : support) sum += s[i];
          // stationary point of <s, t> - g/2 |t|^2 on the support's affine set
          const double shift = b ? (sum - g * *b) / static_cast<double>(size) : 0.0;
          double value = 0.0;
          for (Index i : support) {
            const double t = (s[i] - shift) / g;
            if (t < 0.0) return;
            value += s[i] * t - 0.5 * g * t * t;
          }
          best = std::max(best, value);
        });
      }
      return best;
    }

    case RegKind::Negentropy: {
      // Coordinatewise stationarity s_i - g (log t_i + 1) = shift, solved by
      // bisection on log t_i (orthant) or on the shift (simplex).
      auto value_of = [&](const Vector& t) {
        double v = 0.0;
        for (Index i = 0; i < m; ++i) {
          if (t[i] > 0.0) v += s[i] * t[i] - g * t[i] * std::log(t[i]);
        }
        return v;
      };
      auto solve_log_t = [&](double target) {
        // find u with g (u + 1) = target, u = log t
        double lo = -1e4;
        double hi = 1e4;
        for (int it = 0; it < 300; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (g * (mid + 1.0) < target) lo = mid;
          else hi = mid;
        }
        return 0.5 * (lo + hi);
      };
      if (!b) {
        Vector t(m);
        for (Index i = 0; i < m; ++i) t[i] = std::exp(solve_log_t(s[i]));
        return value_of(t);
      }
      auto mass_at = [&](double shift, Vector& t) {
        for (Index i = 0; i < m; ++i) t[i] = std::exp(solve_log_t(s[i] - shift));
        return t.sum();
      };
      Vector t(m);
      double lo = s.minCoeff() - 50.0 * g - std::abs(std::log(*b)) * g - 10.0;
      double hi = s.maxCoeff() + 50.0 * g + std::abs(std::log(*b)) * g + 10.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass_at(mid, t) > *b) lo = mid;
        else hi = mid;
      }
      mass_at(0.5 * (lo + hi), t);
      t *= *b / t.sum();
      return value_of(t);
    }
  }
  return 0.0;
}

/// Central finite differences.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct LpResult {
  double value = kInf;
  Matrix plan;
};

/// Exact unregularized OT by basis enumeration. Every vertex of the
/// transportation polytope is the unique solution on some spanning tree of
/// the bipartite row/column graph (m + n - 1 cells), so the optimum is the
/// cheapest nonnegative spanning-tree solution.
inline LpResult lp_small(const OTProblem& p) {
  const auto m = static_cast<int>(p.rows());
  const auto n = static_cast<int>(p.cols());
  if (m > 5 || n > 5) throw ProblemError("lp_small: size guard exceeded (m, n <= 5)");
  const int cells = m * n;
  const int tree_size = m + n - 1;

  LpResult best;
  std::vector<int> chosen;
  chosen.reserve(static_cast<size_t>(tree_size));

  auto find = [](std::vector<int>& parent, int u) {
    while (parent[static_cast<size_t>(u)] != u) u = parent[static_cast<size_t>(u)];
    return u;
  };

  auto evaluate_tree = [&]() {
    std::vector<double> residual(static_cast<size_t>(m + n));
    for (int i = 0; i < m; ++i) residual[static_cast<size_t>(i)] = p.a[i];
    for (int j = 0; j < n; ++j) residual[static_cast<size_t>(m + j)] = p.b[j];
    std::vector<int> degree(static_cast<size_t>(m + n), 0);
    std::vector<char> used(chosen.size(), 0);
    for (int e : chosen) {
      ++degree[static_cast<size_t>(e / n)];
      ++degree[static_cast<size_t>(m + e % n)];
    }
    Matrix plan = Matrix::Zero(m, n);
    for (size_t removed = 0; removed < chosen.size(); ++removed) {
      // peel one leaf
      bool peeled = false;
      for (size_t q = 0; q < chosen.size() && !peeled; ++q) {
        if (used[q]) continue;
        const int e = chosen[q];
        const int r = e / n;
        const int c = m + e % n;
        int leaf = -1;
        int other = -1;
        if (degree[static_cast<size_t>(r)] == 1) {
          leaf = r;
          other = c;
        } else if (degree[static_cast<size_t>(c)] == 1) {
          leaf = c;
          other = r;
        }
        if (leaf < 0) continue;
        const double x = residual[static_cast<size_t>(leaf)];
        plan(r, c - m) = x;
        residual[static_cast<size_t>(leaf)] = 0.0;
        residual[static_cast<size_t>(other)] -= x;
        --degree[static_cast<size_t>(leaf)];
        --degree[static_cast<size_t>(other)];
        used[q] = 1;
        peeled = true;
      }
    }
    if ((plan.array() < -1e-12).any()) return;
    plan = plan.cwiseMax(0.0);
    const double value = (plan.array() * p.C.array()).sum();
    if (value < best.value - 1e-14) {
      best.value = value;
      best.plan = plan;
    }
  };

  std::function<void(int, std::vector<int>)> rec = [&](int start, std::vector<int> parent) {
    if (static_cast<int>(chosen.size()) == tree_size) {
      evaluate_tree();
      return;
    }
    const int needed = tree_size - static_cast<int>(chosen.size());
    for (int e = start; e <= cells - needed; ++e) {
      const int ru = find(parent, e / n);
      const int rv = find(parent, m + e % n);
      if (ru == rv) continue;
      std::vector<int> next = parent;
      next[static_cast<size_t>(ru)] = rv;
      chosen.push_back(e);
      rec(e + 1, std::move(next));
      chosen.pop_back();
    }
  };
  std::vector<int> parent(static_cast<size_t>(m + n));
  std::iota(parent.begin(), parent.end(), 0);
  rec(0, parent);
  return best;
}

/// Unregularized OT for moderate sizes by a dense two-phase simplex with
/// Bland's rule. Returns a vertex of U(a, b), so at most m + n - 1 cells are
/// nonzero.
inline LpResult lp_simplex(const OTProblem& p) {
  const auto m = static_cast<int>(p.rows());
  const auto n = static_cast<int>(p.cols());
  if (m > 64 || n > 64) throw ProblemError("lp_simplex: size guard exceeded (m, n <= 64)");
  const int rows = m + n;
  const int vars = m * n;
  const int total = vars + rows;  // structural + artificial
  constexpr double eps = 1e-11;

  // tableau: rows x (total + 1), last column is the right-hand side
  Matrix tab = Matrix::Zero(rows, total + 1);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      tab(i, i * n + j) = 1.0;
      tab(m + j, i * n + j) = 1.0;
    }
  }
  for (int r = 0; r < rows; ++r) {
    tab(r, vars + r) = 1.0;
    tab(r, total) = r < m ? p.a[r] : p.b[r - m];
  }
  std::vector<int> basis(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) basis[static_cast<size_t>(r)] = vars + r;
  std::vector<char> active_row(static_cast<size_t>(rows), 1);

  auto pivot = [&](int r, int c) {
    tab.row(r) /= tab(r, c);
    for (int q = 0; q < rows; ++q) {
      if (q != r && tab(q, c) != 0.0) tab.row(q) -= tab(q, c) * tab.row(r);
    }
    basis[static_cast<size_t>(r)] = c;
  };

  auto run = [&](const Vector& cost, int allowed_cols) {
    for (int guard = 0; guard < 100000; ++guard) {
      // reduced costs
      int enter = -1;
      for (int c = 0; c < allowed_cols && enter < 0; ++c) {
        double red = cost[c];
        for (int r = 0; r < rows; ++r) {
          if (active_row[static_cast<size_t>(r)]) red -= cost[basis[static_cast<size_t>(r)]] * tab(r, c);
        }
        if (red < -eps) enter = c;
      }
      if (enter < 0) return;
      int leave = -1;
      double best_ratio = kInf;
      for (int r = 0; r < rows; ++r) {
        if (!active_row[static_cast<size_t>(r)] || tab(r, enter) <= eps) continue;
        const double ratio = tab(r, total) / tab(r, enter);
        if (ratio < best_ratio - eps ||
            (ratio <= best_ratio + eps && leave >= 0 &&
             basis[static_cast<size_t>(r)] < basis[static_cast<size_t>(leave)])) {
          best_ratio = std::min(best_ratio, ratio);
          leave = r;
        }
      }
      if (leave < 0) throw ProblemError("lp_simplex: unbounded");
      pivot(leave, enter);
    }
    throw ProblemError("lp_simplex: iteration guard exceeded");
  };

  // phase 1: minimize the sum of artificials
  Vector cost1 = Vector::Zero(total);
  cost1.tail(rows).setOnes();
  run(cost1, total);
  // drive zero-level artificials out of the basis, or drop redundant rows
  for (int r = 0; r < rows; ++r) {
    if (basis[static_cast<size_t>(r)] < vars) continue;
    int col = -1;
    for (int c = 0; c < vars && col < 0; ++c) {
      if (std::abs(tab(r, c)) > 1e-9) col = c;
    }
    if (col >= 0) pivot(r, col);
    else active_row[static_cast<size_t>(r)] = 0;
  }
  // phase 2 on structural columns only
  Vector cost2 = Vector::Zero(total);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) cost2[i * n + j] = p.C(i, j);
  }
  run(cost2, vars);

  LpResult res;
  res.plan = Matrix::Zero(m, n);
  for (int r = 0; r < rows; ++r) {
    const int c = basis[static_cast<size_t>(r)];
    if (active_row[static_cast<size_t>(r)] && c < vars) {
      res.plan(c / n, c % n) = std::max(tab(r, total), 0.0);
    }
  }
  res.value = (res.plan.array() * p.C.array()).sum();
  return res;
}

struct SparsePrimalEnumeration {
  double best_value = kInf;
  Matrix best_plan;
  std::vector<double> feasible_values;  // one per feasible support pattern
  std::vector<Matrix> feasible_plans;
};

/// min <T, C> + gamma/2 |T|^2 over U(a, b) with at most k nonzeros per
/// column, by enumerating every cell subset that respects the column budget
/// and solving the equality-constrained QP on it. Subsets whose solution is
/// nonnegative give feasible k-sparse plans; the best of them is optimal.
inline SparsePrimalEnumeration bf_sparse_primal(const OTProblem& p, double gamma, int k) {
  const auto m = static_cast<int>(p.rows());
  const auto n = static_cast<int>(p.cols());
  const int cells = m * n;
  if (cells > 12) throw ProblemError("bf_sparse_primal: size guard exceeded (m * n <= 12)");
  SparsePrimalEnumeration out;
  Vector rhs(m + n);
  rhs << p.a, p.b;
  for (int mask = 1; mask < (1 << cells); ++mask) {
    std::vector<int> per_col(static_cast<size_t>(n), 0);
    std::vector<int> free_cells;
    for (int e = 0; e < cells; ++e) {
      if (mask & (1 << e)) {
        free_cells.push_back(e);
        ++per_col[static_cast<size_t>(e % n)];
      }
    }
    if (*std::max_element(per_col.begin(), per_col.end()) > k) continue;
    const auto nv = static_cast<Index>(free_cells.size());
    Matrix A = Matrix::Zero(m + n, nv);
    Vector c(nv);
    for (Index q = 0; q < nv; ++q) {
      const int e = free_cells[static_cast<size_t>(q)];
      A(e / n, q) = 1.0;
      A(m + e % n, q) = 1.0;
      c[q] = p.C(e / n, e % n);
    }
    // x = (A^T lambda - c) / gamma with A A^T lambda = gamma rhs + A c
    const Matrix AAt = A * A.transpose();
    const Vector lambda = AAt.completeOrthogonalDecomposition().solve(gamma * rhs + A * c);
    const Vector x = (A.transpose() * lambda - c) / gamma;
    if ((A * x - rhs).cwiseAbs().maxCoeff() > 1e-9) continue;
    if ((x.array() < -1e-12).any()) continue;
    Matrix T = Matrix::Zero(m, n);
    for (Index q = 0; q < nv; ++q) {
      const int e = free_cells[static_cast<size_t>(q)];
      T(e / n, e % n) = std::max(x[q], 0.0);
    }
    const double value = (T.array() * p.C.array()).sum() + 0.5 * gamma * T.squaredNorm();
    out.feasible_values.push_back(value);
    out.feasible_plans.push_back(T);
    if (value < out.best_value) {
      out.best_value = value;
      out.best_plan = T;
    }
  }
  return out;
}

/// Psi(t) by bisection on the multiplier of sum(lambda) = k, using
/// lambda_i = min(1, |t_i| / nu). Independent of the sorted closed form.
inline double bf_ksupport_norm_sq(const Vector& t, int k) {
  const Index m = t.size();
  if (k < 1 || k > m) throw ProblemError("bf_ksupport_norm_sq: k out of range");
  const Vector z = t.cwiseAbs();
  const Index nnz = (z.array() > 0.0).count();
  if (nnz <= k) return 0.5 * t.squaredNorm();
  double lo = 0.0;
  double hi = z.sum() + 1.0;
  for (int it = 0; it < 300; ++it) {
    const double nu = 0.5 * (lo + hi);
    const double mass = (z.array() / nu).cwiseMin(1.0).sum();
    if (mass > k) lo = nu;
    else hi = nu;
  }
  const double nu = 0.5 * (lo + hi);
  double v = 0.0;
  for (Index i = 0; i < m; ++i) {
    if (z[i] > 0.0) v += z[i] * z[i] / std::min(1.0, z[i] / nu);
  }
  return 0.5 * v;
}

}  // namespace sparseot::oracle
