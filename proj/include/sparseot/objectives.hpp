#pragma once

// Dual and semi-dual objectives assembled from the columnwise conjugates.
// Both are concave maximization problems for every regularizer, convex or
// not. Each evaluation also returns the plan columns t_j (the conjugate
// gradients), which is how plans are recovered from potentials.

#include "sparseot/conjugates.hpp"
#include "sparseot/core.hpp"

#include <chrono>
#include <functional>

namespace sparseot {

struct SemidualEval {
  double value = 0.0;
  Vector grad;
  Matrix plan;  // column j is t_j
  bool ties = false;
};

struct DualEval {
  double value = 0.0;
  Vector grad_alpha;
  Vector grad_beta;
  Matrix plan;
  bool ties = false;
};

/// <alpha, a> - sum_j conj_b(alpha - c_j, b_j). For Omega = 0 the gradient
/// is a subgradient selection.
inline SemidualEval semidual_objective(const OTProblem& p, const VectorRef& alpha) {
  const Index m = p.rows();
  const Index n = p.cols();
  if (alpha.size() != m) throw ProblemError("semidual_objective: alpha has wrong dimension");
  SemidualEval out;
  out.plan = Matrix::Zero(m, n);
  out.value = alpha.dot(p.a);
  for (Index j = 0; j < n; ++j) {
    if (p.b[j] <= 0.0) continue;
    const Vector s = alpha - p.C.col(j);
    ConjugateEval e = conj_b(p.reg, s, p.b[j]);
    out.value -= e.value;
    out.plan.col(j) = e.grad;
    out.ties = out.ties || e.tie;
  }
  out.grad = p.a - out.plan.rowwise().sum();
  return out;
}

/// <alpha, a> + <beta, b> - sum_j conj_plus(alpha + beta_j 1 - c_j).
inline DualEval dual_objective(const OTProblem& p, const VectorRef& alpha, const VectorRef& beta) {
  if (p.reg.kind == RegKind::None) {
    throw ProblemError("dual_objective: the unregularized dual is a constrained LP and is not supported");
  }
  const Index m = p.rows();
  const Index n = p.cols();
  if (alpha.size() != m || beta.size() != n) {
    throw ProblemError("dual_objective: potentials have wrong dimension");
  }
  DualEval out;
  out.plan = Matrix::Zero(m, n);
  out.value = alpha.dot(p.a) + beta.dot(p.b);
  for (Index j = 0; j < n; ++j) {
    const Vector s = (alpha.array() + beta[j]).matrix() - p.C.col(j);
    ConjugateEval e = conj_plus(p.reg, s);
    out.value -= e.value;
    out.plan.col(j) = e.grad;
    out.ties = out.ties || e.tie;
  }
  out.grad_alpha = p.a - out.plan.rowwise().sum();
  out.grad_beta = p.b - out.plan.colwise().sum().transpose();
  return out;
}

/// Objective handle used by the maximizers: returns the value and writes the
/// gradient.
using ObjectiveFn = std::function<double(const Vector& x, Vector& grad)>;

inline ObjectiveFn semidual_function(const OTProblem& p) {
  return [&p](const Vector& x, Vector& grad) {
    SemidualEval e = semidual_objective(p, x);
    grad = std::move(e.grad);
    return e.value;
  };
}

/// Dual objective over the stacked vector x = (alpha, beta).
inline ObjectiveFn dual_function(const OTProblem& p) {
  return [&p](const Vector& x, Vector& grad) {
    const Index m = p.rows();
    const Index n = p.cols();
    DualEval e = dual_objective(p, x.head(m), x.tail(n));
    grad.resize(m + n);
    grad.head(m) = e.grad_alpha;
    grad.tail(n) = e.grad_beta;
    return e.value;
  };
}

/// beta_j = min_i c_ij - alpha_i.
inline Vector c_transform(const OTProblem& p, const VectorRef& alpha) {
  if (alpha.size() != p.rows()) throw ProblemError("c_transform: alpha has wrong dimension");
  return (p.C.colwise() - alpha).colwise().minCoeff().transpose();
}

struct SinkhornResult {
  DualPotentials potentials;
  Matrix plan;
  SolveReport report;
};

/// Block coordinate ascent on the entropic dual, in the log domain. Each
/// half-step maximizes the dual exactly in alpha (resp. beta); after the beta
/// step the column marginals hold exactly, so convergence is measured on the
/// rows.
inline SinkhornResult sinkhorn(const OTProblem& p, int max_iter, double tol, bool record_time = true) {
  if (p.reg.kind != RegKind::Negentropy) {
    throw ProblemError("sinkhorn: requires a negentropy regularizer");
  }
  const Index m = p.rows();
  const Index n = p.cols();
  const double g = p.reg.gamma;
  const auto start = std::chrono::steady_clock::now();

  // K_ij = -c_ij / gamma - 1
  const Matrix logk = (-p.C.array() / g - 1.0).matrix();
  const Vector log_a = p.a.array().log().matrix();
  const Vector log_b = p.b.array().log().matrix();
  Vector alpha = Vector::Zero(m);
  Vector beta = Vector::Zero(n);

  SinkhornResult res;
  for (int it = 1; it <= max_iter; ++it) {
    for (Index i = 0; i < m; ++i) {
      alpha[i] = g * (log_a[i] - logsumexp(logk.row(i).transpose() + beta / g));
    }
    for (Index j = 0; j < n; ++j) {
      beta[j] = g * (log_b[j] - logsumexp(logk.col(j) + alpha / g));
    }
    const Matrix plan =
        ((logk.colwise() + alpha / g).rowwise() + (beta / g).transpose()).array().exp().matrix();
    const double err = (plan.rowwise().sum() - p.a).cwiseAbs().maxCoeff();
    const double value = alpha.dot(p.a) + beta.dot(p.b) - g * plan.sum();
    double ms = 0.0;
    if (record_time) {
      ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    res.report.trace.push_back({it, value, err, ms});
    res.report.iterations = it;
    res.report.objective = value;
    res.report.grad_norm = err;
    res.plan = plan;
    if (err <= tol) {
      res.report.converged = true;
      break;
    }
  }
  if (!res.report.converged) res.report.message = "sinkhorn: max_iter reached";
  res.potentials.alpha = alpha;
  res.potentials.beta = beta;
  return res;
}

}  // namespace sparseot
