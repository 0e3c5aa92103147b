#pragma once

// Maximizers for the (concave) dual and semi-dual objectives: L-BFGS with
// Armijo backtracking, and ADAM. Objectives are maximized directly; the
// L-BFGS curvature pairs are those of the negated objective.

#include "sparseot/core.hpp"
#include "sparseot/objectives.hpp"
#include "sparseot/recovery.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <tuple>

namespace sparseot {

enum class Method { LBFGS, Adam };

inline std::string_view to_string(Method m) { return m == Method::LBFGS ? "lbfgs" : "adam"; }

inline Method method_from_string(std::string_view name) {
  if (name == "lbfgs" || name == "LBFGS") return Method::LBFGS;
  if (name == "adam" || name == "ADAM") return Method::Adam;
  throw ProblemError("solver.method: unknown method '" + std::string(name) + "'");
}

enum class Formulation { Dual, Semidual };

inline std::string_view to_string(Formulation f) { return f == Formulation::Dual ? "dual" : "semidual"; }

inline Formulation formulation_from_string(std::string_view name) {
  if (name == "dual") return Formulation::Dual;
  if (name == "semidual" || name == "semi-dual") return Formulation::Semidual;
  throw ProblemError("formulation: expected 'dual' or 'semidual', got '" + std::string(name) + "'");
}

struct SolverConfig {
  Method method = Method::LBFGS;
  int max_iter = 1000;
  double tol = 1e-6;  // sup-norm of the gradient
  int lbfgs_history = 10;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 50;
  double adam_lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // When false, every trace wall_ms is 0 so traces are reproducible bit for bit.
  bool record_time = true;

  void validate() const {
    if (max_iter < 1) throw ProblemError("solver.max_iter: must be >= 1");
    if (!(tol > 0.0)) throw ProblemError("solver.tol: must be positive");
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) {
      throw ProblemError("solver.backtrack_factor: must lie in (0, 1)");
    }
    if (lbfgs_history < 1) throw ProblemError("solver.history: must be >= 1");
    if (!(adam_lr > 0.0)) throw ProblemError("solver.lr: must be positive");
  }
};

struct MaximizeResult {
  Vector x;
  SolveReport report;
};

namespace detail {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  [[nodiscard]] double ms() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

struct CurvaturePair {
  Vector s;  // x_{k+1} - x_k
  Vector y;  // g_k - g_{k+1}: gradient change of the negated objective
  double rho;
};

// Two-loop recursion: returns H g, with H the L-BFGS inverse-Hessian estimate
// of the negated objective. H g is an ascent direction for the objective.
inline Vector two_loop(const std::deque<CurvaturePair>& mem, const Vector& g) {
  Vector q = g;
  std::vector<double> alphas(mem.size());
  for (size_t idx = mem.size(); idx-- > 0;) {
    alphas[idx] = mem[idx].rho * mem[idx].s.dot(q);
    q -= alphas[idx] * mem[idx].y;
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (size_t idx = 0; idx < mem.size(); ++idx) {
    const double beta = mem[idx].rho * mem[idx].y.dot(q);
    q += (alphas[idx] - beta) * mem[idx].s;
  }
  return q;
}

inline double sup_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline MaximizeResult maximize_lbfgs(const ObjectiveFn& f, Vector x, const SolverConfig& cfg) {
  Stopwatch clock(cfg.record_time);
  MaximizeResult res;
  SolveReport& rep = res.report;

  Vector g;
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw ProblemError("maximize: objective is not finite at the initial point");
  rep.trace.push_back({0, fx, sup_norm(g), clock.ms()});

  std::deque<CurvaturePair> mem;
  Vector g_new;
  // progress check: the objective must rise measurably every kStallWindow
  // iterations, otherwise the run sits at rounding level (or on a kink)
  constexpr int kStallWindow = 50;
  double f_ref = fx;
  int it_ref = 0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (sup_norm(g) <= cfg.tol) {
      rep.converged = true;
      break;
    }
    Vector d = two_loop(mem, g);
    double slope = g.dot(d);
    if (!(slope > 0.0)) {
      mem.clear();
      d = g;
      slope = g.squaredNorm();
    }

    bool accepted = false;
    Vector x_new;
    double f_new = 0.0;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double step = 1.0;
      for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
        x_new = x + step * d;
        f_new = f(x_new, g_new);
        if (std::isfinite(f_new) && f_new >= fx + cfg.armijo_c * step * slope) {
          accepted = true;
          break;
        }
        step *= cfg.backtrack_factor;
      }
      if (!accepted && !mem.empty()) {
        // retry once along the plain gradient with the memory discarded
        mem.clear();
        d = g;
        slope = g.squaredNorm();
      } else {
        break;
      }
    }
    if (!accepted) {
      rep.message = "line search failed after " + std::to_string(cfg.max_backtracks) + " backtracks";
      break;
    }

    CurvaturePair pair{x_new - x, g - g_new, 0.0};
    const double sy = pair.s.dot(pair.y);
    if (sy > 1e-10 * pair.s.norm() * pair.y.norm()) {
      pair.rho = 1.0 / sy;
      mem.push_back(std::move(pair));
      if (static_cast<int>(mem.size()) > cfg.lbfgs_history) mem.pop_front();
    }
    x = std::move(x_new);
    g = g_new;
    fx = f_new;
    rep.iterations = it;
    rep.trace.push_back({it, fx, sup_norm(g), clock.ms()});
    if (it - it_ref >= kStallWindow) {
      if (fx - f_ref <= 1e-13 * std::max(1.0, std::abs(fx))) {
        rep.message = "stalled: no objective increase in " + std::to_string(kStallWindow) + " iterations";
        break;
      }
      f_ref = fx;
      it_ref = it;
    }
  }
  if (!rep.converged && sup_norm(g) <= cfg.tol) rep.converged = true;
  if (!rep.converged && rep.message.empty()) rep.message = "max_iter reached";
  rep.objective = fx;
  rep.grad_norm = sup_norm(g);
  res.x = std::move(x);
  return res;
}

inline MaximizeResult maximize_adam(const ObjectiveFn& f, Vector x, const SolverConfig& cfg) {
  Stopwatch clock(cfg.record_time);
  MaximizeResult res;
  SolveReport& rep = res.report;

  Vector g;
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw ProblemError("maximize: objective is not finite at the initial point");
  rep.trace.push_back({0, fx, sup_norm(g), clock.ms()});

  Vector m1 = Vector::Zero(x.size());
  Vector m2 = Vector::Zero(x.size());
  double b1t = 1.0;
  double b2t = 1.0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (sup_norm(g) <= cfg.tol) {
      rep.converged = true;
      break;
    }
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * g;
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    const Vector mhat = m1 / (1.0 - b1t);
    const Vector vhat = m2 / (1.0 - b2t);
    x += (cfg.adam_lr * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps)).matrix();
    fx = f(x, g);
    rep.iterations = it;
    rep.trace.push_back({it, fx, sup_norm(g), clock.ms()});
  }
  if (!rep.converged && sup_norm(g) <= cfg.tol) rep.converged = true;
  if (!rep.converged) rep.message = "max_iter reached";
  rep.objective = fx;
  rep.grad_norm = sup_norm(g);
  res.x = std::move(x);
  return res;
}

}  // namespace detail

/// Maximizes a concave objective from x0. Stops when the gradient sup-norm
/// reaches cfg.tol, at max_iter, or when the line search fails; the report
/// says which.
inline MaximizeResult maximize(const ObjectiveFn& f, const Vector& x0, const SolverConfig& cfg) {
  cfg.validate();
  return cfg.method == Method::LBFGS ? detail::maximize_lbfgs(f, x0, cfg)
                                     : detail::maximize_adam(f, x0, cfg);
}

namespace detail {

// alpha' with alpha'_i - alpha'_r = d for every forest edge (i, r, d), and
// each tree shifted to stay closest to alpha in the least-squares sense.
inline Vector solve_forest(const Vector& alpha, const std::vector<std::tuple<Index, Index, double>>& edges) {
  const Index m = alpha.size();
  std::vector<std::vector<std::pair<Index, double>>> adj(static_cast<size_t>(m));
  for (const auto& [i, r, d] : edges) {
    adj[static_cast<size_t>(i)].emplace_back(r, -d);  // alpha_r = alpha_i - d
    adj[static_cast<size_t>(r)].emplace_back(i, d);
  }
  Vector out = alpha;
  std::vector<char> seen(static_cast<size_t>(m), 0);
  std::vector<Index> comp;
  for (Index root = 0; root < m; ++root) {
    if (seen[static_cast<size_t>(root)] || adj[static_cast<size_t>(root)].empty()) continue;
    comp.clear();
    comp.push_back(root);
    seen[static_cast<size_t>(root)] = 1;
    out[root] = 0.0;
    for (size_t q = 0; q < comp.size(); ++q) {
      const Index u = comp[q];
      for (const auto& [v, d] : adj[static_cast<size_t>(u)]) {
        if (seen[static_cast<size_t>(v)]) continue;
        seen[static_cast<size_t>(v)] = 1;
        out[v] = out[u] + d;
        comp.push_back(v);
      }
    }
    double shift = 0.0;
    for (Index u : comp) shift += alpha[u] - out[u];
    shift /= static_cast<double>(comp.size());
    for (Index u : comp) out[u] += shift;
  }
  return out;
}

}  // namespace detail

struct PolishResult {
  Vector alpha;
  double value = 0.0;
  bool improved = false;
};

/// Vertex snap for semi-duals with kinks (unregularized, or
/// SparsityConstrained). Near-ties at the boundary between kept and dropped
/// scores are ranked by their gap and added greedily as equalities, as long
/// as they form a forest over the rows; after each addition alpha is moved
/// onto all accepted equalities and the objective is evaluated. The best
/// point is kept if it beats the input, and the pass repeats from there.
/// When the objective is piecewise linear (k = 1 or unregularized) and the
/// closest ties are the active ones, this lands exactly on a maximizer.
inline PolishResult polish_semidual(const OTProblem& p, const Vector& alpha, int max_rounds = 5) {
  PolishResult out{alpha, semidual_objective(p, alpha).value, false};
  const bool kinked = p.reg.kind == RegKind::None || p.reg.kind == RegKind::SparsityConstrained;
  if (!kinked) return out;
  const Index m = p.rows();
  const Index n = p.cols();
  const int k = p.reg.kind == RegKind::None ? 1 : p.reg.k;
  if (k >= m) return out;  // no boundary between kept and dropped entries

  struct Edge {
    double gap;
    Index i;
    Index r;
    double d;  // required alpha_i - alpha_r
  };
  for (int round = 0; round < max_rounds; ++round) {
    const Vector base = out.alpha;
    std::vector<Edge> edges;
    for (Index j = 0; j < n; ++j) {
      if (p.b[j] <= 0.0) continue;
      const Vector s = base - p.C.col(j);
      const auto order = topk_indices(s, std::min<int>(k + 1, static_cast<int>(m)));
      const Index last_kept = order[static_cast<size_t>(k - 1)];
      const Index first_dropped = order[static_cast<size_t>(k)];
      std::vector<char> kept(static_cast<size_t>(m), 0);
      for (int q = 0; q < k; ++q) kept[static_cast<size_t>(order[static_cast<size_t>(q)])] = 1;
      for (Index i = 0; i < m; ++i) {
        // dropped rows against the last kept one, kept rows against the first dropped
        const Index r = kept[static_cast<size_t>(i)] ? first_dropped : last_kept;
        if (kept[static_cast<size_t>(i)] && i == last_kept) {
          edges.push_back({std::abs(s[i] - s[r]), i, r, p.C(i, j) - p.C(r, j)});
        } else if (!kept[static_cast<size_t>(i)] || i != r) {
          if (i != r) edges.push_back({std::abs(s[i] - s[r]), i, r, p.C(i, j) - p.C(r, j)});
        }
      }
    }
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.gap < y.gap; });

    std::vector<Index> parent(static_cast<size_t>(m));
    std::iota(parent.begin(), parent.end(), Index{0});
    auto find = [&](Index u) {
      while (parent[static_cast<size_t>(u)] != u) {
        parent[static_cast<size_t>(u)] = parent[static_cast<size_t>(parent[static_cast<size_t>(u)])];
        u = parent[static_cast<size_t>(u)];
      }
      return u;
    };
    std::vector<std::tuple<Index, Index, double>> forest;
    bool improved = false;
    for (const Edge& e : edges) {
      const Index ru = find(e.i);
      const Index rv = find(e.r);
      if (ru == rv) continue;
      parent[static_cast<size_t>(ru)] = rv;
      forest.emplace_back(e.i, e.r, e.d);
      const Vector cand = detail::solve_forest(base, forest);
      const double v = semidual_objective(p, cand).value;
      if (v > out.value + 1e-15 * std::max(1.0, std::abs(out.value))) {
        out.alpha = cand;
        out.value = v;
        out.improved = true;
        improved = true;
      }
      if (static_cast<Index>(forest.size()) == m - 1) break;
    }
    if (!improved) break;
  }
  return out;
}

namespace detail {

// The unregularized and k = 1 semi-duals are piecewise linear, and L-BFGS
// stalls on their kinks well away from the maximizer. Their max terms are
// smoothed by log-sum-exp at temperature eps, which is exactly the entropic
// semi-dual with gamma = eps; it is solved for decreasing eps with warm
// starts, and each stage is snapped onto its tie set. Returns the best
// point found, or alpha itself when nothing improves on it. Other
// regularizers are returned unchanged.
inline Vector rescue_kinked_semidual(const OTProblem& p, const Vector& alpha, const SolverConfig& cfg) {
  const bool piecewise_linear =
      p.reg.kind == RegKind::None || (p.reg.kind == RegKind::SparsityConstrained && p.reg.k == 1);
  if (!piecewise_linear) return polish_semidual(p, alpha).alpha;

  Vector best = alpha;
  double best_value = semidual_objective(p, alpha).value;
  auto consider = [&](const Vector& x) {
    const PolishResult pol = polish_semidual(p, x);
    if (pol.value > best_value) {
      best_value = pol.value;
      best = pol.alpha;
    }
  };
  consider(alpha);

  OTProblem smooth = p;
  SolverConfig inner = cfg;
  inner.method = Method::LBFGS;
  inner.record_time = false;
  const double scale = std::max(1.0, p.C.cwiseAbs().maxCoeff());
  Vector x = alpha;
  for (double eps = 1e-1 * scale; eps >= 1e-6 * scale; eps /= 10.0) {
    smooth.reg = Regularizer::negentropy(eps);
    MaximizeResult r = maximize(semidual_function(smooth), x, inner);
    if (!r.x.allFinite()) break;
    x = std::move(r.x);
    consider(x);
  }
  return best;
}

struct KinkAscent {
  Vector x;
  double value = 0.0;
  double certificate = kInf;  // sup-norm of the least-norm superdifferential element
  std::vector<TraceEntry> trace;
};

// Least-norm supergradient at x over ties within a window; an empty vector
// when that face is too large to be worth solving.
using FaceFn = std::function<Vector(const Vector&, double)>;

// At a kink the selected gradient does not vanish even at a maximizer, so
// optimality is judged by the least-norm element of the superdifferential.
// While that exceeds tol, each round first tries `refine` (a candidate
// point, kept when it improves the value) and otherwise moves x along the
// least-norm element over a widening tie window, the smallest window that
// yields an increase winning.
inline KinkAscent ascend_kinked(const std::function<double(const Vector&)>& value, const FaceFn& face,
                                const std::function<Vector(const Vector&)>& refine, Vector x,
                                const SolverConfig& cfg, int first_iter, double ms_offset) {
  constexpr double kCertWindow = 1e-9;
  Stopwatch clock(cfg.record_time);
  KinkAscent out;
  double fx = value(x);
  auto certificate = [&](const Vector& at) {
    const Vector d = face(at, kCertWindow);
    return d.size() ? sup_norm(d) : kInf;
  };
  const int max_steps = std::min(cfg.max_iter, 1000);
  bool refined_last = false;
  for (int step = 0;; ++step) {
    out.certificate = certificate(x);
    if (out.certificate <= cfg.tol || step == max_steps) break;
    bool moved = false;
    if (!refined_last) {
      Vector y = refine(x);
      const double fy = value(y);
      if (fy > fx) {
        x = std::move(y);
        fx = fy;
        moved = true;
      }
    }
    refined_last = moved;
    for (double w = kCertWindow; w <= 0.1 && !moved; w *= 10.0) {
      const Vector d = face(x, w);
      if (d.size() == 0) break;
      if (d.squaredNorm() == 0.0) continue;
      for (double t = 4.0; t > 1e-12; t *= cfg.backtrack_factor) {
        const Vector y = x + t * d;
        const double fy = value(y);
        if (fy > fx) {
          x = y;
          fx = fy;
          moved = true;
          break;
        }
      }
    }
    if (!moved) break;
    out.trace.push_back({first_iter + step + 1, fx, certificate(x), cfg.record_time ? ms_offset + clock.ms() : 0.0});
  }
  out.x = std::move(x);
  out.value = fx;
  return out;
}

// Equalities alpha_i - alpha_r = c_ij - c_rj keeping the rows tied in each
// column tied. shift_j is beta_j for the dual and 0 for the semi-dual.
inline std::pair<Matrix, Vector> tie_equalities(const OTProblem& p, const Vector& alpha, const Vector& shift,
                                                bool simplex, double window) {
  const Index m = p.rows();
  const double g = p.reg.kind == RegKind::None ? 1.0 : p.reg.gamma;
  std::vector<std::tuple<Index, Index, double>> rows;
  for (Index j = 0; j < p.cols(); ++j) {
    if (simplex && p.b[j] <= 0.0) continue;
    const Vector s = (alpha.array() + shift[j] - p.C.col(j).array()).matrix() / g;
    const ColumnFace f = column_face(p.reg, s, p.b[j], simplex, window);
    for (size_t q = 1; q < f.tied.size(); ++q) {
      rows.emplace_back(f.tied[q], f.tied[0], p.C(f.tied[q], j) - p.C(f.tied[0], j));
    }
  }
  Matrix E = Matrix::Zero(static_cast<Index>(rows.size()), m);
  Vector h(static_cast<Index>(rows.size()));
  for (size_t q = 0; q < rows.size(); ++q) {
    const auto [i, r, d] = rows[q];
    E(static_cast<Index>(q), i) = 1.0;
    E(static_cast<Index>(q), r) = -1.0;
    h[static_cast<Index>(q)] = d;
  }
  return {E, h};
}

// Moves x onto {E x_head = h} and maximizes f there. On that set the tied
// maximizers all give the same value, so the restriction is smooth and
// L-BFGS in null-space coordinates converges where the full problem
// stalls. E acts on the leading coordinates of x.
inline Vector maximize_on_ties(const ObjectiveFn& f, const Vector& x, const Matrix& E, const Vector& h,
                               const SolverConfig& cfg) {
  if (E.rows() == 0) return x;
  Matrix Ef = Matrix::Zero(E.rows(), x.size());
  Ef.leftCols(E.cols()) = E;
  const Eigen::JacobiSVD<Matrix> svd(Ef, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const Vector x0 = x - svd.solve(Ef * x - h);
  const Matrix N = svd.matrixV().rightCols(x.size() - svd.rank());
  if (N.cols() == 0) return x0;
  const ObjectiveFn restricted = [&](const Vector& z, Vector& grad) {
    Vector gx;
    const double v = f(x0 + N * z, gx);
    grad = N.transpose() * gx;
    return v;
  };
  SolverConfig inner = cfg;
  inner.method = Method::LBFGS;
  inner.record_time = false;
  inner.max_iter = std::min(cfg.max_iter, 1000);
  return x0 + N * maximize_lbfgs(restricted, Vector::Zero(N.cols()), inner).x;
}

// Best of the restricted maximizations over the tie sets seen at a few
// windows; ties after a step are only as exact as the step was.
inline Vector refine_on_ties(const ObjectiveFn& f, const Vector& x,
                             const std::function<std::pair<Matrix, Vector>(double)>& ties,
                             const SolverConfig& cfg) {
  Vector best = x;
  Vector g;
  double best_value = f(x, g);
  for (double w : {1e-9, 1e-6, 1e-4}) {
    const auto [E, h] = ties(w);
    const Vector y = maximize_on_ties(f, x, E, h, cfg);
    const double v = f(y, g);
    if (v > best_value) {
      best_value = v;
      best = y;
    }
  }
  return best;
}

// Faces with more tied entries than this only matter for wide windows,
// where an approximate direction is not worth a large solve.
inline constexpr Index kMaxFaceEntries = 400;

inline KinkAscent ascend_kinked_semidual(const OTProblem& p, const Vector& alpha, const SolverConfig& cfg,
                                         int first_iter, double ms_offset) {
  const ObjectiveFn f = semidual_function(p);
  const Vector zero = Vector::Zero(p.cols());
  return ascend_kinked(
      [&](const Vector& x) { return semidual_objective(p, x).value; },
      [&](const Vector& x, double w) {
        FaceSelection face = semidual_face(p, x, w);
        return face.tied_entries > kMaxFaceEntries && w > 1e-9 ? Vector() : std::move(face.subgradient);
      },
      [&](const Vector& x) {
        const Vector y = polish_semidual(p, x, 1).alpha;
        return refine_on_ties(f, y, [&](double w) { return tie_equalities(p, y, zero, true, w); }, cfg);
      },
      alpha, cfg, first_iter, ms_offset);
}

inline KinkAscent ascend_kinked_dual(const OTProblem& p, const Vector& x0, const SolverConfig& cfg, int first_iter,
                                     double ms_offset) {
  const Index m = p.rows();
  const Index n = p.cols();
  const ObjectiveFn f = dual_function(p);
  return ascend_kinked(
      [&](const Vector& x) { return dual_objective(p, x.head(m), x.tail(n)).value; },
      [&](const Vector& x, double w) {
        FaceSelection face = dual_face(p, x.head(m), x.tail(n), w);
        return face.tied_entries > kMaxFaceEntries && w > 1e-9 ? Vector() : std::move(face.subgradient);
      },
      [&](const Vector& x) {
        return refine_on_ties(
            f, x, [&](double w) { return tie_equalities(p, x.head(m), x.tail(n), false, w); }, cfg);
      },
      x0, cfg, first_iter, ms_offset);
}

// Folds a kink ascent into a maximize result. The selected plan at a
// certified tie carries the larger marginal error of one tied extreme
// point; ties_detected says so and the *_face helpers give the combination.
inline void adopt_ascent(const ObjectiveFn& f, KinkAscent& ka, MaximizeResult& r, double tol, const std::string& how) {
  r.report.trace.insert(r.report.trace.end(), ka.trace.begin(), ka.trace.end());
  r.report.iterations += static_cast<int>(ka.trace.size());
  if (ka.x != r.x) {
    r.x = std::move(ka.x);
    Vector g;
    r.report.objective = f(r.x, g);
    r.report.grad_norm = sup_norm(g);
    r.report.message += "; refined by " + how;
  }
  if (ka.certificate <= tol) {
    r.report.converged = true;
    r.report.grad_norm = ka.certificate;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", ka.certificate);
    r.report.message = std::string("converged at a nondifferentiable point: least-norm supergradient ") + buf +
                       " <= tol";
  }
}

}  // namespace detail

struct SolveResult {
  DualPotentials potentials;
  TransportPlan plan;
  SolveReport report;
};

/// Solves the dual or semi-dual from zero potentials and recovers the plan.
/// Negentropy duals go through Sinkhorn. The unregularized semi-dual is
/// piecewise linear, so L-BFGS/ADAM only reach it slowly through
/// subgradients; the unregularized dual is not supported.
inline SolveResult solve(const OTProblem& problem, Formulation form, const SolverConfig& cfg) {
  cfg.validate();
  const OTProblem p = validate_problem(problem);
  const Index m = p.rows();
  const Index n = p.cols();

  SolveResult out;
  if (form == Formulation::Dual) {
    if (p.reg.kind == RegKind::None) {
      throw ProblemError("formulation: the unregularized dual is not supported, use the semidual");
    }
    if (p.reg.kind == RegKind::Negentropy) {
      SinkhornResult sk = sinkhorn(p, cfg.max_iter, cfg.tol, cfg.record_time);
      out.potentials = sk.potentials;
      out.report = std::move(sk.report);
    } else {
      const ObjectiveFn f = dual_function(p);
      MaximizeResult r = maximize(f, Vector::Zero(m + n), cfg);
      if (!r.report.converged && p.reg.kind == RegKind::SparsityConstrained && p.reg.k < m) {
        const double ms = r.report.trace.empty() ? 0.0 : r.report.trace.back().wall_ms;
        detail::KinkAscent ka = detail::ascend_kinked_dual(p, r.x, cfg, r.report.iterations, ms);
        detail::adopt_ascent(f, ka, r, cfg.tol, "superdifferential ascent");
      }
      out.potentials.alpha = r.x.head(m);
      out.potentials.beta = Vector(r.x.tail(n));
      out.report = std::move(r.report);
    }
    out.plan = plan_from_dual(p, out.potentials.alpha, *out.potentials.beta);
  } else {
    const ObjectiveFn f = semidual_function(p);
    MaximizeResult r = maximize(f, Vector::Zero(m), cfg);
    const bool kinked = p.reg.kind == RegKind::None || (p.reg.kind == RegKind::SparsityConstrained && p.reg.k < m);
    if (!r.report.converged && kinked) {
      const Vector rescued = detail::rescue_kinked_semidual(p, r.x, cfg);
      const double ms = r.report.trace.empty() ? 0.0 : r.report.trace.back().wall_ms;
      detail::KinkAscent ka = detail::ascend_kinked_semidual(p, rescued, cfg, r.report.iterations, ms);
      detail::adopt_ascent(f, ka, r, cfg.tol, "smoothing, tie snapping and superdifferential ascent");
    }
    out.potentials.alpha = std::move(r.x);
    out.report = std::move(r.report);
    out.plan = plan_from_semidual(p, out.potentials.alpha);
  }
  out.report.ties_detected = out.plan.ties;
  if (p.reg.kind == RegKind::SparsityConstrained && n * p.reg.k < m) {
    out.report.cardinality_infeasible = true;
  }
  return out;
}

}  // namespace sparseot
