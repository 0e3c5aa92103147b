#pragma once

// Closed-form conjugates of the columnwise regularizers,
//
//   conj_plus(s) = max_{t >= 0}          <s, t> - Omega(t)
//   conj_b(s)    = max_{t in b Delta^m}  <s, t> - Omega(t)
//
// together with their maximizers (gradients, or a subgradient selection at
// ties). Every formula is written for gamma = 1 and rescaled through
// (gamma f)^*(s) = gamma f^*(s / gamma).

#include "sparseot/core.hpp"
#include "sparseot/projections.hpp"

namespace sparseot {

struct ConjugateEval {
  double value = 0.0;
  Vector grad;
  bool tie = false;  // argmax is set-valued; grad is the lowest-index selection
};

namespace detail {

// Largest entry of u outside `kept`, or -inf when every entry is kept.
inline double largest_excluded(const VectorRef& u, const std::vector<Index>& kept) {
  std::vector<char> mask(static_cast<size_t>(u.size()), 0);
  for (Index i : kept) mask[static_cast<size_t>(i)] = 1;
  double best = -kInf;
  for (Index i = 0; i < u.size(); ++i) {
    if (!mask[static_cast<size_t>(i)]) best = std::max(best, u[i]);
  }
  return best;
}

inline ConjugateEval unit_conj_plus(const Regularizer& reg, const VectorRef& u) {
  ConjugateEval out;
  const double tol = tie_tolerance(u);
  switch (reg.kind) {
    case RegKind::None: {
      out.grad = Vector::Zero(u.size());
      if ((u.array() > 0.0).any()) {
        out.value = kInf;
      } else {
        out.value = 0.0;
        out.tie = (u.array().abs() <= tol).any();
      }
      break;
    }
    case RegKind::Negentropy: {
      out.grad = (u.array() - 1.0).exp().matrix();
      out.value = out.grad.sum();
      break;
    }
    case RegKind::Quadratic: {
      out.grad = u.cwiseMax(0.0);
      out.value = 0.5 * out.grad.squaredNorm();
      break;
    }
    case RegKind::SparsityConstrained: {
      const auto kept = topk_indices(u, reg.k);
      out.grad = Vector::Zero(u.size());
      for (Index i : kept) out.grad[i] = std::max(u[i], 0.0);
      out.value = 0.5 * out.grad.squaredNorm();
      const double kth = u[kept.back()];
      out.tie = kth > tol && kth - largest_excluded(u, kept) <= tol;
      break;
    }
  }
  return out;
}

inline ConjugateEval unit_conj_b(const Regularizer& reg, const VectorRef& u, double b) {
  ConjugateEval out;
  const double tol = tie_tolerance(u);
  switch (reg.kind) {
    case RegKind::None: {
      Index arg = 0;
      const double mx = u.maxCoeff(&arg);  // first maximizer
      out.value = b * mx;
      out.grad = Vector::Zero(u.size());
      out.grad[arg] = b;
      out.tie = (u.array() >= mx - tol).count() > 1;
      break;
    }
    case RegKind::Negentropy: {
      const double lse = logsumexp(u);
      out.value = b * (lse - std::log(b));
      out.grad = b * (u.array() - lse).exp().matrix();
      break;
    }
    case RegKind::Quadratic: {
      const double theta = find_tau(u, b);
      out.grad = (u.array() - theta).cwiseMax(0.0).matrix();
      double v = 0.0;
      for (Index i = 0; i < u.size(); ++i) {
        if (u[i] >= theta) v += u[i] * u[i] - theta * theta;
      }
      out.value = 0.5 * v;
      break;
    }
    case RegKind::SparsityConstrained: {
      auto proj = ksparse_project_simplex_full(u, b, reg.k);
      double v = 0.0;
      for (Index i : proj.kept) {
        if (u[i] >= proj.tau) v += u[i] * u[i] - proj.tau * proj.tau;
      }
      out.value = 0.5 * v;
      const double kth = u[proj.kept.back()];
      out.tie = kth > proj.tau + tol && kth - largest_excluded(u, proj.kept) <= tol;
      out.grad = std::move(proj.t);
      break;
    }
  }
  return out;
}

inline void check_finite(const VectorRef& s, const char* where) {
  if (!s.allFinite()) throw ProblemError(std::string(where) + ": nonfinite input");
}

}  // namespace detail

/// max_{t >= 0} <s, t> - Omega(t). For Omega = 0 the value is +inf as soon as
/// some s_i > 0; this is reported through the value, not an exception.
inline ConjugateEval conj_plus(const Regularizer& reg, const VectorRef& s) {
  detail::check_finite(s, "conj_plus");
  const double g = reg.kind == RegKind::None ? 1.0 : reg.gamma;
  ConjugateEval out = detail::unit_conj_plus(reg, s / g);
  out.value *= g;
  return out;
}

/// max_{t in b Delta^m} <s, t> - Omega(t).
inline ConjugateEval conj_b(const Regularizer& reg, const VectorRef& s, double b) {
  detail::check_finite(s, "conj_b");
  if (!(b > 0.0)) throw ProblemError("conj_b: b must be positive");
  const double g = reg.kind == RegKind::None ? 1.0 : reg.gamma;
  ConjugateEval out = detail::unit_conj_b(reg, s / g, b);
  out.value *= g;
  return out;
}

/// Omega(t) itself, including the implicit constraints: +inf for negative
/// entries, and for SparsityConstrained when t has more than k nonzeros.
inline double regularizer_value(const Regularizer& reg, const VectorRef& t) {
  if ((t.array() < 0.0).any()) return kInf;
  switch (reg.kind) {
    case RegKind::None: return 0.0;
    case RegKind::Negentropy: {
      double v = 0.0;
      for (Index i = 0; i < t.size(); ++i) {
        if (t[i] > 0.0) v += t[i] * std::log(t[i]);
      }
      return reg.gamma * v;
    }
    case RegKind::Quadratic: return 0.5 * reg.gamma * t.squaredNorm();
    case RegKind::SparsityConstrained: {
      const Index nnz = (t.array().abs() > kNonzeroThreshold).count();
      if (nnz > reg.k) return kInf;
      return 0.5 * reg.gamma * t.squaredNorm();
    }
  }
  return 0.0;
}

/// Squared k-support norm Psi(t) = 1/2 min_{sum lambda = k, 0 < lambda <= 1}
/// sum_i t_i^2 / lambda_i. The minimizing lambda is 1 on the r-th largest
/// magnitudes and proportional to |t_i| on the rest; the split point is found
/// by a scan over the sorted magnitudes.
inline double ksupport_norm_sq(const VectorRef& t, int k) {
  const Index m = t.size();
  if (k < 1 || k > m) throw ProblemError("ksupport_norm_sq: k out of range");
  std::vector<double> z(static_cast<size_t>(m));
  for (Index i = 0; i < m; ++i) z[static_cast<size_t>(i)] = std::abs(t[i]);
  std::sort(z.begin(), z.end(), std::greater<>());

  // head = number of entries with lambda = 1; tail holds the rest.
  std::vector<double> suffix(z.size() + 1, 0.0);
  for (size_t i = z.size(); i-- > 0;) suffix[i] = suffix[i + 1] + z[i];
  std::vector<double> prefix_sq(z.size() + 1, 0.0);
  for (size_t i = 0; i < z.size(); ++i) prefix_sq[i + 1] = prefix_sq[i] + z[i] * z[i];

  double best = kInf;
  for (int head = k - 1; head >= 0; --head) {
    const auto h = static_cast<size_t>(head);
    const double group = static_cast<double>(k - head);
    const double tail = suffix[h];
    // lambda_i = group * z_i / tail must stay <= 1 on the tail
    if (z[h] * group <= tail * (1.0 + 1e-12) || tail == 0.0) {
      best = std::min(best, prefix_sq[h] + tail * tail / group);
    }
  }
  return 0.5 * best;
}

/// Squared k-support dual norm 1/2 sum of the k largest s_i^2.
inline double ksupport_dual_norm_sq(const VectorRef& s, int k) {
  if (k < 1 || k > s.size()) throw ProblemError("ksupport_dual_norm_sq: k out of range");
  const Vector sq = s.cwiseAbs2();
  double v = 0.0;
  for (Index i : topk_indices(sq, k)) v += sq[i];
  return 0.5 * v;
}

}  // namespace sparseot
