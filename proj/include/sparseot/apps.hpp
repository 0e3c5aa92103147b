#pragma once

// Application drivers: synthetic instance generators, balanced clustering
// with an OT E-step, and mixture-of-experts gating with per-expert capacity.

#include "sparseot/core.hpp"
#include "sparseot/recovery.hpp"
#include "sparseot/solvers.hpp"

#include <array>
#include <cstdint>
#include <random>

namespace sparseot {

// ---------------------------------------------------------------- generators

inline double gaussian_bump(double z, double mean, double std) {
  const double d = z - mean;
  return std::exp(-d * d / (2.0 * std * std));
}

namespace detail {

inline Vector bump_histogram(int grid, const std::vector<std::pair<double, double>>& components) {
  Vector h = Vector::Zero(grid);
  for (int z = 0; z < grid; ++z) {
    for (const auto& [mean, std] : components) h[z] += gaussian_bump(z, mean, std);
  }
  return h / h.sum();
}

inline Matrix grid_sq_cost(int grid) {
  Matrix C(grid, grid);
  const double scale = static_cast<double>(grid - 1) * (grid - 1);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) C(i, j) = static_cast<double>(i - j) * (i - j) / scale;
  }
  return C;
}

inline void check_grid(int grid, std::initializer_list<double> stds) {
  if (grid < 2) throw ProblemError("generator: grid_size must be >= 2");
  for (double s : stds) {
    if (!(s > 0.0)) throw ProblemError("generator: standard deviations must be positive");
  }
}

}  // namespace detail

/// Normalized Gaussian bumps on {0, ..., grid-1} with C_ij = (i-j)^2/(grid-1)^2.
/// The returned problem has no regularizer set.
inline OTProblem gen_1d_gaussian_pair(int grid, double mean1, double std1, double mean2, double std2) {
  detail::check_grid(grid, {std1, std2});
  OTProblem p;
  p.a = detail::bump_histogram(grid, {{mean1, std1}});
  p.b = detail::bump_histogram(grid, {{mean2, std2}});
  p.C = detail::grid_sq_cost(grid);
  return p;
}

/// Single-bump source, two-bump target.
inline OTProblem gen_1d_bigaussian_target(int grid, double src_mean, double src_std, double tgt_mean1,
                                          double tgt_mean2, double tgt_std) {
  detail::check_grid(grid, {src_std, tgt_std});
  OTProblem p;
  p.a = detail::bump_histogram(grid, {{src_mean, src_std}});
  p.b = detail::bump_histogram(grid, {{tgt_mean1, tgt_std}, {tgt_mean2, tgt_std}});
  p.C = detail::grid_sq_cost(grid);
  return p;
}

struct PointClouds {
  Matrix source;  // d x m, one point per column
  Matrix target;  // d x n
  Matrix C;       // m x n
};

/// Pairwise (squared) Euclidean distances between the columns of X and Y.
inline Matrix pairwise_cost(const Matrix& X, const Matrix& Y, bool squared) {
  if (X.rows() != Y.rows()) throw ProblemError("pairwise_cost: point dimensions differ");
  Matrix C(X.cols(), Y.cols());
  for (Index i = 0; i < X.cols(); ++i) {
    for (Index j = 0; j < Y.cols(); ++j) {
      const double d2 = (X.col(i) - Y.col(j)).squaredNorm();
      C(i, j) = squared ? d2 : std::sqrt(d2);
    }
  }
  return C;
}

/// Draws m source and n target points from two Gaussians. Covariances are
/// symmetrized before factorization; a non positive definite result is an
/// error. Deterministic under seed.
inline PointClouds gen_2d_gaussian_clouds(int m, int n, const Vector& mean_src, const Matrix& cov_src,
                                          const Vector& mean_tgt, const Matrix& cov_tgt, std::uint64_t seed,
                                          bool squared = false) {
  if (m < 1 || n < 1) throw ProblemError("generator: point counts must be >= 1");
  const Index d = mean_src.size();
  if (mean_tgt.size() != d || cov_src.rows() != d || cov_src.cols() != d || cov_tgt.rows() != d ||
      cov_tgt.cols() != d) {
    throw ProblemError("generator: mean/covariance dimensions disagree");
  }
  auto factor = [](const Matrix& cov, const char* which) {
    const Matrix sym = 0.5 * (cov + cov.transpose());
    Eigen::LLT<Matrix> llt(sym);
    if (llt.info() != Eigen::Success) {
      throw ProblemError(std::string("generator: ") + which + " covariance is not positive definite");
    }
    return Matrix(llt.matrixL());
  };
  const Matrix L_src = factor(cov_src, "source");
  const Matrix L_tgt = factor(cov_tgt, "target");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int count, const Vector& mean, const Matrix& L) {
    Matrix P(d, count);
    for (int c = 0; c < count; ++c) {
      Vector z(d);
      for (Index r = 0; r < d; ++r) z[r] = normal(rng);
      P.col(c) = mean + L * z;
    }
    return P;
  };
  PointClouds out;
  out.source = draw(m, mean_src, L_src);
  out.target = draw(n, mean_tgt, L_tgt);
  out.C = pairwise_cost(out.source, out.target, squared);
  return out;
}

/// The 20 + 20 point comparison instance: N((0,0), I) against
/// N((4,4), [[1,-0.8],[-0.6,1]]), Euclidean cost, uniform marginals.
inline OTProblem gen_reference_clouds_problem(std::uint64_t seed, int points = 20) {
  Vector mu0(2);
  mu0 << 0.0, 0.0;
  Vector mu1(2);
  mu1 << 4.0, 4.0;
  Matrix cov1(2, 2);
  cov1 << 1.0, -0.8, -0.6, 1.0;
  const PointClouds pc = gen_2d_gaussian_clouds(points, points, mu0, Matrix::Identity(2, 2), mu1, cov1, seed);
  OTProblem p;
  p.a = Vector::Constant(points, 1.0 / points);
  p.b = Vector::Constant(points, 1.0 / points);
  p.C = pc.C;
  return p;
}

/// Isotropic 2-D blobs with the given sizes, centers on a circle of the
/// given radius. Points are columns, blob-major order.
inline Matrix gen_blobs(const std::vector<int>& sizes, double radius, double spread, std::uint64_t seed) {
  int total = 0;
  for (int s : sizes) {
    if (s < 0) throw ProblemError("generator: blob sizes must be nonnegative");
    total += s;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, spread);
  Matrix X(2, total);
  int col = 0;
  const double pi = std::acos(-1.0);
  for (size_t b = 0; b < sizes.size(); ++b) {
    const double angle = 2.0 * pi * static_cast<double>(b) / static_cast<double>(sizes.size());
    for (int q = 0; q < sizes[b]; ++q, ++col) {
      X(0, col) = radius * std::cos(angle) + normal(rng);
      X(1, col) = radius * std::sin(angle) + normal(rng);
    }
  }
  return X;
}

// ---------------------------------------------------------------- clustering

enum class ClusterMethod { KMeans, SoftKMeans, OptimalTransport };

inline std::string_view to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::KMeans: return "kmeans";
    case ClusterMethod::SoftKMeans: return "soft_kmeans";
    case ClusterMethod::OptimalTransport: return "ot";
  }
  return "unknown";
}

inline ClusterMethod cluster_method_from_string(std::string_view name) {
  if (name == "kmeans") return ClusterMethod::KMeans;
  if (name == "soft_kmeans") return ClusterMethod::SoftKMeans;
  if (name == "ot") return ClusterMethod::OptimalTransport;
  throw ProblemError("cluster.method: expected kmeans, soft_kmeans or ot, got '" + std::string(name) + "'");
}

struct ClusterConfig {
  int n_clusters = 2;
  ClusterMethod method = ClusterMethod::OptimalTransport;
  Regularizer reg = Regularizer::sparsity_constrained(1.0, 1);
  int em_steps = 50;
  SolverConfig inner = [] {
    SolverConfig c;
    c.max_iter = 500;
    return c;
  }();
  std::uint64_t seed = 0;
  double init_std = 1e-3;  // centers start at N(0, init_std^2)

  void validate() const {
    if (n_clusters < 1) throw ProblemError("cluster.n_clusters: must be >= 1");
    if (em_steps < 1) throw ProblemError("cluster.em_steps: must be >= 1");
    if (!(init_std >= 0.0)) throw ProblemError("cluster.init_std: must be nonnegative");
    inner.validate();
  }
};

/// k = ceil(1.15 m / n): a little slack above the m/n nonzeros per column
/// that would force one nonzero per row.
inline int balanced_sparsity_k(Index m, int n_clusters) {
  return static_cast<int>(std::ceil(1.15 * static_cast<double>(m) / n_clusters));
}

struct ClusterMetrics {
  double avg_cost = 0.0;  // mean squared distance to the assigned center
  double kl_to_uniform = 0.0;
  std::vector<int> sizes;
};

struct ClusterResult {
  Matrix centers;  // d x n
  Matrix plan;     // m x n soft assignment
  std::vector<int> assignment;
  ClusterMetrics metrics;
  int reinitialized = 0;      // empty-cluster restarts (hard K-means only)
  int inner_unconverged = 0;  // E-steps whose OT solve hit max_iter
  bool ties = false;
};

/// Hard assignment by rowwise argmax, lowest index on ties.
inline std::vector<int> argmax_rows(const Matrix& T) {
  std::vector<int> out(static_cast<size_t>(T.rows()));
  for (Index i = 0; i < T.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < T.cols(); ++j) {
      if (T(i, j) > T(i, best)) best = j;
    }
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// KL(counts / total || uniform); empty clusters contribute zero.
inline double kl_to_uniform(const std::vector<int>& counts) {
  double total = 0.0;
  for (int c : counts) total += c;
  if (total <= 0.0) return 0.0;
  const double q = 1.0 / static_cast<double>(counts.size());
  double kl = 0.0;
  for (int c : counts) {
    if (c > 0) {
      const double pj = c / total;
      kl += pj * std::log(pj / q);
    }
  }
  return kl;
}

inline ClusterMetrics cluster_metrics(const Matrix& X, const Matrix& centers, const std::vector<int>& assignment,
                                      int n_clusters) {
  ClusterMetrics mt;
  mt.sizes.assign(static_cast<size_t>(n_clusters), 0);
  double cost = 0.0;
  for (Index i = 0; i < X.cols(); ++i) {
    const int j = assignment[static_cast<size_t>(i)];
    ++mt.sizes[static_cast<size_t>(j)];
    cost += (X.col(i) - centers.col(j)).squaredNorm();
  }
  mt.avg_cost = X.cols() ? cost / static_cast<double>(X.cols()) : 0.0;
  mt.kl_to_uniform = kl_to_uniform(mt.sizes);
  return mt;
}

/// EM-style clustering of the columns of X. The E-step is hard K-means,
/// soft K-means, or regularized OT with uniform marginals (a = 1/m,
/// b = 1/n) on C_ij = |x_i - mu_j|^2; the M-step is the plan-weighted mean.
/// Metrics use the rowwise argmax of a final E-step at the returned centers.
inline ClusterResult balanced_cluster(const Matrix& X, const ClusterConfig& cfg) {
  cfg.validate();
  const Index d = X.rows();
  const Index m = X.cols();
  const int n = cfg.n_clusters;
  if (m < n) throw ProblemError("cluster: fewer points than clusters");
  if (!X.allFinite()) throw ProblemError("cluster: nonfinite point coordinates");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClusterResult res;
  res.centers.resize(d, n);
  for (Index j = 0; j < n; ++j) {
    for (Index r = 0; r < d; ++r) res.centers(r, j) = cfg.init_std * normal(rng);
  }

  OTProblem ot;
  ot.a = Vector::Constant(m, 1.0 / static_cast<double>(m));
  ot.b = Vector::Constant(n, 1.0 / n);
  ot.reg = cfg.reg;

  auto e_step = [&](const Matrix& centers) -> Matrix {
    const Matrix C = pairwise_cost(X, centers, true);
    switch (cfg.method) {
      case ClusterMethod::KMeans: {
        Matrix T = Matrix::Zero(m, n);
        for (Index i = 0; i < m; ++i) {
          Index best = 0;
          C.row(i).minCoeff(&best);
          T(i, best) = 1.0;
        }
        return T;
      }
      case ClusterMethod::SoftKMeans: {
        Matrix T(m, n);
        for (Index i = 0; i < m; ++i) T.row(i) = softmax(-C.row(i).transpose()).transpose();
        return T;
      }
      case ClusterMethod::OptimalTransport: {
        ot.C = C;
        const Formulation form = ot.reg.kind == RegKind::Negentropy ? Formulation::Dual : Formulation::Semidual;
        SolveResult sr = solve(ot, form, cfg.inner);
        if (!sr.report.converged) ++res.inner_unconverged;
        res.ties = res.ties || sr.report.ties_detected;
        return sr.plan.entries;
      }
    }
    return {};
  };

  for (int step = 0; step < cfg.em_steps; ++step) {
    const Matrix T = e_step(res.centers);
    for (Index j = 0; j < n; ++j) {
      const double w = T.col(j).sum();
      if (w > 0.0) {
        res.centers.col(j) = X * T.col(j) / w;
      } else {
        std::uniform_int_distribution<Index> pick(0, m - 1);
        res.centers.col(j) = X.col(pick(rng));
        ++res.reinitialized;
      }
    }
  }
  res.plan = e_step(res.centers);
  res.assignment = argmax_rows(res.plan);
  res.metrics = cluster_metrics(X, res.centers, res.assignment, n);
  return res;
}

// ---------------------------------------------------------------- routing

struct RouterConfig {
  int num_experts = 0;  // 0: take it from the affinity matrix
  int capacity = 1;     // k, the per-expert buffer
  double gamma = 1.0;
  int adam_steps = 50;
  double adam_lr = 1e-2;
  // L-BFGS polish after the ADAM phase, to the tolerance below.
  bool refine = true;
  int refine_max_iter = 2000;
  double tol = 1e-6;
  // Resolve tied supports toward row feasibility and repair on the support.
  bool resolve_ties = true;
  bool record_time = false;

  void validate() const {
    if (num_experts < 0) throw ProblemError("router.num_experts: must be >= 1");
    if (capacity < 1) throw ProblemError("router.capacity: must be >= 1");
    if (!(gamma > 0.0)) throw ProblemError("router.gamma: must be positive");
    if (adam_steps < 0) throw ProblemError("router.adam_steps: must be >= 0");
    if (!(adam_lr > 0.0)) throw ProblemError("router.adam_lr: must be positive");
    if (!(tol > 0.0)) throw ProblemError("router.tol: must be positive");
  }
};

struct GatingResult {
  Matrix gating;  // tokens x experts
  Matrix softmax_affinity;
  SolveReport report;
  bool ties = false;
  bool repaired = false;
  std::string diagnostic;
};

inline Matrix row_softmax(const Matrix& A) {
  Matrix P(A.rows(), A.cols());
  for (Index i = 0; i < A.rows(); ++i) P.row(i) = softmax(A.row(i).transpose()).transpose();
  return P;
}

/// Capacity-constrained gating: sparsity-constrained OT on cost -softmax(A)
/// with one unit of mass per token and m/n per expert, at most `capacity`
/// tokens per expert. The semi-dual is run with ADAM, then optionally
/// polished with L-BFGS.
inline GatingResult moe_gating(const Matrix& affinity, const RouterConfig& cfg) {
  cfg.validate();
  const Index m = affinity.rows();
  const Index n = affinity.cols();
  if (m < 1 || n < 1) throw ProblemError("router: empty affinity matrix");
  if (cfg.num_experts != 0 && cfg.num_experts != n) {
    throw ProblemError("router.num_experts: does not match the affinity matrix");
  }
  if (!affinity.allFinite()) throw ProblemError("router: nonfinite affinity");
  if (n * cfg.capacity < m) {
    throw ProblemError("router.capacity: n * k < m, the experts cannot host every token");
  }

  GatingResult out;
  out.softmax_affinity = row_softmax(affinity);
  OTProblem p;
  p.a = Vector::Ones(m);
  p.b = Vector::Constant(n, static_cast<double>(m) / static_cast<double>(n));
  p.C = -out.softmax_affinity;
  p.reg = Regularizer::sparsity_constrained(cfg.gamma, static_cast<int>(std::min<Index>(cfg.capacity, m)));
  p = validate_problem(p);

  const ObjectiveFn f = semidual_function(p);
  Vector alpha = Vector::Zero(m);
  if (cfg.adam_steps > 0) {
    SolverConfig adam;
    adam.method = Method::Adam;
    adam.max_iter = cfg.adam_steps;
    adam.tol = cfg.tol;
    adam.adam_lr = cfg.adam_lr;
    adam.record_time = cfg.record_time;
    MaximizeResult r = maximize(f, alpha, adam);
    alpha = std::move(r.x);
    out.report = std::move(r.report);
  }
  if (cfg.refine) {
    SolverConfig lb;
    lb.max_iter = cfg.refine_max_iter;
    lb.tol = cfg.tol;
    lb.record_time = cfg.record_time;
    MaximizeResult r = maximize(f, alpha, lb);
    if (!r.report.converged) {
      // the optimum typically sits on a support tie; see solve()
      const Vector rescued = detail::rescue_kinked_semidual(p, r.x, lb);
      const double ms = r.report.trace.empty() ? 0.0 : r.report.trace.back().wall_ms;
      detail::KinkAscent ka = detail::ascend_kinked_semidual(p, rescued, lb, r.report.iterations, ms);
      detail::adopt_ascent(f, ka, r, lb.tol, "tie snapping and superdifferential ascent");
    }
    alpha = std::move(r.x);
    // append the polish to the ADAM trace, continuing the iteration count
    const int offset = out.report.iterations;
    for (size_t q = out.report.trace.empty() ? 0 : 1; q < r.report.trace.size(); ++q) {
      TraceEntry e = r.report.trace[q];
      e.iter += offset;
      out.report.trace.push_back(e);
    }
    out.report.iterations = offset + r.report.iterations;
    out.report.objective = r.report.objective;
    out.report.grad_norm = r.report.grad_norm;
    out.report.converged = r.report.converged;
    out.report.message = r.report.message;
  }

  TransportPlan plan = plan_from_semidual(p, alpha);
  out.ties = plan.ties;
  if (cfg.resolve_ties && plan.row_marginal_err > cfg.tol) {
    // Ties at the optimum leave the default selection row-infeasible. Pick
    // supports that favor under-served tokens, then fix the entries on them.
    const double tie_tol = std::max(1e-9, 10.0 * out.report.grad_norm);
    TransportPlan balanced = plan_from_semidual_balanced(p, alpha, tie_tol);
    RepairResult rep = repair_marginals(p, balanced);
    if (rep.repaired && rep.plan.row_marginal_err < plan.row_marginal_err) {
      plan = std::move(rep.plan);
      out.repaired = true;
    } else if (balanced.row_marginal_err < plan.row_marginal_err) {
      plan = std::move(balanced);
    }
    out.diagnostic = rep.diagnostic;
    out.ties = out.ties || balanced.ties;
  }
  out.report.ties_detected = out.ties;
  out.gating = std::move(plan.entries);
  return out;
}

/// Per-token top-k of softmax(A), other entries zeroed.
inline Matrix topk_gating(const Matrix& affinity, int k) {
  const Matrix P = row_softmax(affinity);
  Matrix G = Matrix::Zero(P.rows(), P.cols());
  for (Index i = 0; i < P.rows(); ++i) {
    for (Index j : topk_indices(P.row(i).transpose(), k)) G(i, j) = P(i, j);
  }
  return G;
}

/// Entropic OT on cost -A (a = 1, b = m/n), then a per-token top-kappa mask.
/// gamma and the Sinkhorn iteration count are free parameters here.
inline Matrix sbase_gating(const Matrix& affinity, int kappa, double gamma = 1.0, int iterations = 100) {
  const Index m = affinity.rows();
  const Index n = affinity.cols();
  OTProblem p;
  p.a = Vector::Ones(m);
  p.b = Vector::Constant(n, static_cast<double>(m) / static_cast<double>(n));
  p.C = -affinity;
  p.reg = Regularizer::negentropy(gamma);
  p = validate_problem(p);
  const SinkhornResult sk = sinkhorn(p, iterations, 0.0, false);
  Matrix G = Matrix::Zero(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j : topk_indices(sk.plan.row(i).transpose(), kappa)) G(i, j) = sk.plan(i, j);
  }
  return G;
}

}  // namespace sparseot
