#pragma once

// Domain types and shared numeric helpers for cardinality-constrained optimal
// transport. Everything here is a pure function over value types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sparseot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

/// Entries with magnitude at or below this value count as zeros in sparsity
/// accounting and are snapped to exact zero in recovered plans.
inline constexpr double kNonzeroThreshold = 1e-12;

/// Marginals whose total mass lies within this distance of 1 are rescaled to
/// unit mass instead of being rejected.
inline constexpr double kNormalizeTolerance = 1e-9;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Thrown for malformed problems and out-of-range parameters. The message
/// names the offending field.
class ProblemError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RegKind { None, Negentropy, Quadratic, SparsityConstrained };

inline std::string_view to_string(RegKind kind) {
  switch (kind) {
    case RegKind::None: return "none";
    case RegKind::Negentropy: return "negentropy";
    case RegKind::Quadratic: return "quadratic";
    case RegKind::SparsityConstrained: return "sparsity_constrained";
  }
  return "unknown";
}

inline RegKind reg_kind_from_string(std::string_view name) {
  if (name == "none" || name == "unregularized") return RegKind::None;
  if (name == "negentropy" || name == "entropy") return RegKind::Negentropy;
  if (name == "quadratic" || name == "squared_l2") return RegKind::Quadratic;
  if (name == "sparsity_constrained" || name == "topk" || name == "sparse") {
    return RegKind::SparsityConstrained;
  }
  throw ProblemError("regularizer.kind: unknown regularizer '" + std::string(name) + "'");
}

/// Columnwise regularizer. `gamma` is unused for None, `k` only matters for
/// SparsityConstrained.
struct Regularizer {
  RegKind kind = RegKind::None;
  double gamma = 1.0;
  int k = 0;

  static Regularizer none() { return {RegKind::None, 1.0, 0}; }
  static Regularizer negentropy(double gamma) { return {RegKind::Negentropy, gamma, 0}; }
  static Regularizer quadratic(double gamma) { return {RegKind::Quadratic, gamma, 0}; }
  static Regularizer sparsity_constrained(double gamma, int k) {
    return {RegKind::SparsityConstrained, gamma, k};
  }

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind != RegKind::None) os << "(gamma=" << gamma;
    if (kind == RegKind::SparsityConstrained) os << ",k=" << k;
    if (kind != RegKind::None) os << ")";
    return os.str();
  }
};

/// Discrete OT problem: marginals a (length m) and b (length n), cost C (m x n).
struct OTProblem {
  Vector a;
  Vector b;
  Matrix C;
  Regularizer reg;

  [[nodiscard]] Index rows() const { return C.rows(); }
  [[nodiscard]] Index cols() const { return C.cols(); }
};

struct DualPotentials {
  Vector alpha;
  std::optional<Vector> beta;  // present only for the dual formulation
};

/// Dense plan with per-column sparsity metadata.
struct TransportPlan {
  Matrix entries;
  std::vector<Index> col_nnz;
  double row_marginal_err = 0.0;
  double col_marginal_err = 0.0;
  bool ties = false;  // some column came from a set-valued argmax

  [[nodiscard]] Index max_col_nnz() const {
    return col_nnz.empty() ? 0 : *std::max_element(col_nnz.begin(), col_nnz.end());
  }
  [[nodiscard]] Index nnz() const {
    return std::accumulate(col_nnz.begin(), col_nnz.end(), Index{0});
  }
};

struct TraceEntry {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct SolveReport {
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  std::vector<TraceEntry> trace;
  bool converged = false;
  bool ties_detected = false;
  // n * k < m for a sparsity-constrained problem: no plan in U(a, b) has all
  // columns k-sparse.
  bool cardinality_infeasible = false;
  std::string message;
};

/// Two entries of s are tied when they differ by at most this amount.
inline double tie_tolerance(const VectorRef& s) {
  const double scale = s.size() ? s.cwiseAbs().maxCoeff() : 0.0;
  return 1e-9 * std::max(1.0, scale);
}

inline OTProblem validate_problem(OTProblem p) {
  const Index m = p.a.size();
  const Index n = p.b.size();
  if (m < 1 || n < 1) throw ProblemError("marginals: histograms must have length >= 1");
  if (p.C.rows() != m || p.C.cols() != n) {
    std::ostringstream os;
    os << "cost: dimension mismatch, expected " << m << "x" << n << " got " << p.C.rows()
       << "x" << p.C.cols();
    throw ProblemError(os.str());
  }
  auto check_hist = [](const Vector& h, const char* name) {
    for (Index i = 0; i < h.size(); ++i) {
      if (!std::isfinite(h[i])) {
        throw ProblemError(std::string("marginals: nonfinite entry in ") + name);
      }
      if (h[i] < 0.0) {
        std::ostringstream os;
        os << "marginals: negative marginal entry " << name << "[" << i << "] = " << h[i];
        throw ProblemError(os.str());
      }
    }
  };
  check_hist(p.a, "a");
  check_hist(p.b, "b");
  if (!p.C.allFinite()) throw ProblemError("cost: nonfinite cost entry");

  if (p.reg.kind != RegKind::None && !(p.reg.gamma > 0.0)) {
    throw ProblemError("regularizer.gamma: gamma must be positive");
  }
  if (p.reg.kind == RegKind::SparsityConstrained && (p.reg.k < 1 || p.reg.k > m)) {
    std::ostringstream os;
    os << "regularizer.k: k out of range (k=" << p.reg.k << ", m=" << m << ")";
    throw ProblemError(os.str());
  }

  const double sa = p.a.sum();
  const double sb = p.b.sum();
  if (!(sa > 0.0) || !(sb > 0.0)) throw ProblemError("marginals: zero total mass");
  if (std::abs(sa - 1.0) <= kNormalizeTolerance) p.a /= sa;
  if (std::abs(sb - 1.0) <= kNormalizeTolerance) p.b /= sb;
  const double ma = p.a.sum();
  const double mb = p.b.sum();
  if (std::abs(ma - mb) > kNormalizeTolerance * std::max(1.0, std::max(ma, mb))) {
    std::ostringstream os;
    os << "marginals: marginal mass mismatch (" << ma << " vs " << mb << ")";
    throw ProblemError(os.str());
  }
  return p;
}

/// Indices of the k largest entries of s, in decreasing order of value.
/// Equal values are ordered by lowest index first.
inline std::vector<Index> topk_indices(const VectorRef& s, int k) {
  const Index m = s.size();
  if (k < 1 || k > m) {
    throw ProblemError("k out of range (k=" + std::to_string(k) + ", m=" + std::to_string(m) + ")");
  }
  std::vector<Index> idx(static_cast<size_t>(m));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto before = [&s](Index i, Index j) { return s[i] > s[j] || (s[i] == s[j] && i < j); };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), before);
  idx.resize(static_cast<size_t>(k));
  return idx;
}

/// Keeps the k largest entries and replaces the rest by -inf.
inline Vector topk_values(const VectorRef& s, int k) {
  const auto keep = topk_indices(s, k);
  Vector out = Vector::Constant(s.size(), -kInf);
  for (Index i : keep) out[i] = s[i];
  return out;
}

inline double logsumexp(const VectorRef& s) {
  if (s.size() == 0) throw ProblemError("logsumexp: empty input");
  if (s.size() == 1) return s[0];
  const double mx = s.maxCoeff();
  if (!std::isfinite(mx)) return mx;  // all -inf, or a +inf entry
  return mx + std::log((s.array() - mx).exp().sum());
}

/// Row-stochastic softmax of a single vector.
inline Vector softmax(const VectorRef& s) {
  const double lse = logsumexp(s);
  return (s.array() - lse).exp().matrix();
}

/// Swaps the roles of rows and columns, so that cardinality constraints apply
/// to the rows of the original problem.
inline OTProblem transpose(const OTProblem& p) {
  OTProblem t;
  t.a = p.b;
  t.b = p.a;
  t.C = p.C.transpose();
  t.reg = p.reg;
  return t;
}

}  // namespace sparseot
