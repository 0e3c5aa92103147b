#pragma once

// JSON-configured commands behind the sparse_ot executable. Each cmd_*
// returns the process exit code: 0 ok, 1 configuration error, 2 solver did
// not converge (output files are still written).

#include "sparseot/apps.hpp"
#include "sparseot/io.hpp"
#include "sparseot/recovery.hpp"
#include "sparseot/solvers.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

namespace sparseot::cli {

using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNotConverged = 2;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- field access

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const json* find(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  const auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field + ": expected a number");
  return v.get<double>();
}

inline long long as_int(const json& v, const std::string& field) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d) return static_cast<long long>(d);
  }
  throw ConfigError(field + ": expected an integer");
}

inline bool as_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) throw ConfigError(field + ": expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ConfigError(field + ": expected a string");
  return v.get<std::string>();
}

inline double get_double(const json& obj, const std::string& key, const std::string& path, double def) {
  const json* v = find(obj, key, path);
  return v ? as_double(*v, join(path, key)) : def;
}

inline double require_double(const json& obj, const std::string& key, const std::string& path) {
  const json* v = find(obj, key, path);
  if (!v) throw ConfigError(join(path, key) + ": missing required field");
  return as_double(*v, join(path, key));
}

inline int get_int(const json& obj, const std::string& key, const std::string& path, int def) {
  const json* v = find(obj, key, path);
  return v ? static_cast<int>(as_int(*v, join(path, key))) : def;
}

inline int require_int(const json& obj, const std::string& key, const std::string& path) {
  const json* v = find(obj, key, path);
  if (!v) throw ConfigError(join(path, key) + ": missing required field");
  return static_cast<int>(as_int(*v, join(path, key)));
}

inline bool get_bool(const json& obj, const std::string& key, const std::string& path, bool def) {
  const json* v = find(obj, key, path);
  return v ? as_bool(*v, join(path, key)) : def;
}

inline std::string get_string(const json& obj, const std::string& key, const std::string& path,
                              const std::string& def) {
  const json* v = find(obj, key, path);
  return v ? as_string(*v, join(path, key)) : def;
}

inline Vector as_vector(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field + ": expected an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = as_double(v[i], field);
  return out;
}

inline Matrix as_matrix(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty() || !v[0].is_array()) {
    throw ConfigError(field + ": expected a nonempty array of rows");
  }
  const size_t cols = v[0].size();
  Matrix out(static_cast<Index>(v.size()), static_cast<Index>(cols));
  for (size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_array() || v[i].size() != cols) throw ConfigError(field + ": rows have different lengths");
    for (size_t j = 0; j < cols; ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) = as_double(v[i][j], field);
    }
  }
  return out;
}

// ProblemError messages start with the field name; keep them as config errors.
template <class Fn>
auto rethrow_as_config(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ProblemError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

inline json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- sections

/// {kind, gamma, k}. `k_auto` is substituted when k is the string "auto".
inline Regularizer parse_regularizer(const json& r, const std::string& path, int k_auto = 0) {
  using namespace detail;
  if (!r.is_object()) throw ConfigError(path + ": expected an object");
  Regularizer reg;
  reg.kind = rethrow_as_config([&] { return reg_kind_from_string(get_string(r, "kind", path, "")); });
  reg.gamma = get_double(r, "gamma", path, 1.0);
  if (reg.kind != RegKind::None && !(reg.gamma > 0.0)) throw ConfigError(join(path, "gamma") + ": must be positive");
  if (reg.kind == RegKind::SparsityConstrained) {
    const json* k = find(r, "k", path);
    if (!k) throw ConfigError(join(path, "k") + ": missing required field");
    if (k->is_string() && k->get<std::string>() == "auto" && k_auto > 0) reg.k = k_auto;
    else reg.k = static_cast<int>(as_int(*k, join(path, "k")));
  }
  return reg;
}

inline SolverConfig parse_solver(const json& s, const std::string& path) {
  using namespace detail;
  SolverConfig cfg;
  if (s.is_null()) {
    cfg.record_time = false;
    return cfg;
  }
  if (!s.is_object()) throw ConfigError(path + ": expected an object");
  cfg.method = rethrow_as_config([&] { return method_from_string(get_string(s, "method", path, "lbfgs")); });
  cfg.max_iter = get_int(s, "max_iter", path, cfg.max_iter);
  cfg.tol = get_double(s, "tol", path, cfg.tol);
  cfg.adam_lr = get_double(s, "lr", path, cfg.adam_lr);
  cfg.lbfgs_history = get_int(s, "history", path, cfg.lbfgs_history);
  cfg.armijo_c = get_double(s, "armijo_c", path, cfg.armijo_c);
  cfg.backtrack_factor = get_double(s, "backtrack_factor", path, cfg.backtrack_factor);
  const json* seed = find(s, "seed", path);
  if (seed) {
    const long long v = as_int(*seed, join(path, "seed"));
    if (v < 0) throw ConfigError(join(path, "seed") + ": must be nonnegative");
    cfg.seed = static_cast<std::uint64_t>(v);
  }
  // Wall-clock columns are opt-in so that output files are reproducible.
  cfg.record_time = get_bool(s, "record_time", path, false);
  rethrow_as_config([&] {
    cfg.validate();
    return 0;
  });
  return cfg;
}

/// The `problem` section: cost (inline rows or a generator) and marginals
/// ("uniform", {a, b}, or the generator's own when omitted).
inline OTProblem parse_problem(const json& cfg) {
  using namespace detail;
  const json* pj = find(cfg, "problem", "");
  if (!pj) throw ConfigError("problem: missing required section");
  const json& p = *pj;
  if (!p.is_object()) throw ConfigError("problem: expected an object");

  OTProblem prob;
  bool has_generator_marginals = false;
  const json* cost = find(p, "cost", "problem");
  if (!cost) throw ConfigError("problem.cost: missing required field");
  if (cost->is_array()) {
    prob.C = as_matrix(*cost, "problem.cost");
  } else if (cost->is_object()) {
    const std::string path = "problem.cost";
    const std::string gen = get_string(*cost, "generator", path, "");
    if (gen == "gaussian_1d") {
      prob = rethrow_as_config([&] {
        return gen_1d_gaussian_pair(get_int(*cost, "grid", path, 32), get_double(*cost, "mean1", path, 10.0),
                                    get_double(*cost, "std1", path, 4.0), get_double(*cost, "mean2", path, 16.0),
                                    get_double(*cost, "std2", path, 5.0));
      });
      has_generator_marginals = true;
    } else if (gen == "bigaussian_1d") {
      prob = rethrow_as_config([&] {
        return gen_1d_bigaussian_target(
            get_int(*cost, "grid", path, 32), get_double(*cost, "src_mean", path, 16.0),
            get_double(*cost, "src_std", path, 5.0), get_double(*cost, "tgt_mean1", path, 8.0),
            get_double(*cost, "tgt_mean2", path, 24.0), get_double(*cost, "tgt_std", path, 5.0));
      });
      has_generator_marginals = true;
    } else if (gen == "clouds_2d") {
      const int m = get_int(*cost, "m", path, get_int(p, "m", "problem", 20));
      const int n = get_int(*cost, "n", path, get_int(p, "n", "problem", 20));
      Vector mu_s = Vector::Zero(2);
      Vector mu_t = Vector::Constant(2, 4.0);
      Matrix cov_s = Matrix::Identity(2, 2);
      Matrix cov_t(2, 2);
      cov_t << 1.0, -0.8, -0.6, 1.0;
      if (const json* v = find(*cost, "mean_src", path)) mu_s = as_vector(*v, path + ".mean_src");
      if (const json* v = find(*cost, "mean_tgt", path)) mu_t = as_vector(*v, path + ".mean_tgt");
      if (const json* v = find(*cost, "cov_src", path)) cov_s = as_matrix(*v, path + ".cov_src");
      if (const json* v = find(*cost, "cov_tgt", path)) cov_t = as_matrix(*v, path + ".cov_tgt");
      const auto seed = static_cast<std::uint64_t>(get_int(*cost, "seed", path, 0));
      const bool squared = get_bool(*cost, "squared", path, false);
      prob.C = rethrow_as_config(
          [&] { return gen_2d_gaussian_clouds(m, n, mu_s, cov_s, mu_t, cov_t, seed, squared).C; });
    } else if (gen == "random_uniform") {
      const int m = get_int(*cost, "m", path, get_int(p, "m", "problem", 0));
      const int n = get_int(*cost, "n", path, get_int(p, "n", "problem", 0));
      if (m < 1 || n < 1) throw ConfigError("problem.m: random_uniform needs m and n >= 1");
      std::mt19937_64 rng(static_cast<std::uint64_t>(get_int(*cost, "seed", path, 0)));
      std::uniform_real_distribution<double> unif(0.0, get_double(*cost, "scale", path, 1.0));
      prob.C.resize(m, n);
      for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < n; ++j) prob.C(i, j) = unif(rng);
      }
    } else {
      throw ConfigError("problem.cost.generator: unknown generator '" + gen + "'");
    }
  } else {
    throw ConfigError("problem.cost: expected an array of rows or a generator object");
  }

  const Index m = prob.C.rows();
  const Index n = prob.C.cols();
  if (const json* v = find(p, "m", "problem"); v && as_int(*v, "problem.m") != m) {
    throw ConfigError("problem.m: does not match the cost matrix");
  }
  if (const json* v = find(p, "n", "problem"); v && as_int(*v, "problem.n") != n) {
    throw ConfigError("problem.n: does not match the cost matrix");
  }

  const json* marg = find(p, "marginals", "problem");
  if (marg && marg->is_string()) {
    if (marg->get<std::string>() != "uniform") throw ConfigError("problem.marginals: expected \"uniform\"");
    prob.a = Vector::Constant(m, 1.0 / static_cast<double>(m));
    prob.b = Vector::Constant(n, 1.0 / static_cast<double>(n));
  } else if (marg && marg->is_object()) {
    const json* a = find(*marg, "a", "problem.marginals");
    const json* b = find(*marg, "b", "problem.marginals");
    if (!a || !b) throw ConfigError("problem.marginals: needs both a and b");
    prob.a = as_vector(*a, "problem.marginals.a");
    prob.b = as_vector(*b, "problem.marginals.b");
  } else if (marg) {
    throw ConfigError("problem.marginals: expected \"uniform\" or {a, b}");
  } else if (!has_generator_marginals) {
    prob.a = Vector::Constant(m, 1.0 / static_cast<double>(m));
    prob.b = Vector::Constant(n, 1.0 / static_cast<double>(n));
  }

  if (const json* r = find(cfg, "regularizer", "")) {
    prob.reg = parse_regularizer(*r, "regularizer");
  } else {
    throw ConfigError("regularizer: missing required section");
  }
  return rethrow_as_config([&] { return validate_problem(prob); });
}

inline std::filesystem::path prepare_output_dir(const json& cfg) {
  const std::filesystem::path dir = detail::get_string(cfg, "output_dir", "", "out");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("output_dir: cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << std::setw(2) << j << '\n';
}

/// Runs a command body, mapping configuration problems to exit code 1.
template <class Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const ProblemError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kExitConfig;
}

// ---------------------------------------------------------------- commands

inline json solve_report_json(const OTProblem& p, Formulation form, const SolveResult& r) {
  const PlanStats st = plan_stats(p, r.plan);
  json j;
  j[form == Formulation::Dual ? "objective_dual" : "objective_semidual"] = r.report.objective;
  j["primal_value"] = number_or_null(st.primal_value);
  j["grad_norm"] = r.report.grad_norm;
  j["iterations"] = r.report.iterations;
  j["converged"] = r.report.converged;
  j["ties_detected"] = r.report.ties_detected;
  j["max_col_nnz"] = st.max_col_nnz;
  j["marginal_err_row"] = st.row_marginal_err;
  j["marginal_err_col"] = st.col_marginal_err;
  j["cardinality_infeasible"] = r.report.cardinality_infeasible;
  j["regularizer"] = p.reg.describe();
  j["formulation"] = std::string(to_string(form));
  if (!r.report.message.empty()) j["message"] = r.report.message;
  return j;
}

/// Writes plan.csv, trace.csv and report.json to output_dir.
inline int cmd_solve(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const json cfg = load_config(config_path);
    const OTProblem p = parse_problem(cfg);
    const Formulation form = detail::rethrow_as_config(
        [&] { return formulation_from_string(detail::get_string(cfg, "formulation", "", "semidual")); });
    const SolverConfig solver = parse_solver(cfg.contains("solver") ? cfg["solver"] : json(), "solver");
    if (form == Formulation::Dual && p.reg.kind == RegKind::None) {
      throw ConfigError("formulation: the unregularized dual is not supported, use \"semidual\"");
    }
    const auto dir = prepare_output_dir(cfg);

    const SolveResult r = solve(p, form, solver);
    io::write_plan_csv((dir / "plan.csv").string(), r.plan.entries);
    io::write_trace_csv((dir / "trace.csv").string(), r.report.trace);
    const json report = solve_report_json(p, form, r);
    write_json(dir / "report.json", report);

    out << "objective " << io::format_double(r.report.objective) << '\n'
        << "marginal_err_row " << io::format_double(r.plan.row_marginal_err) << '\n'
        << "marginal_err_col " << io::format_double(r.plan.col_marginal_err) << '\n';
    if (r.report.cardinality_infeasible) err << "warning: n * k < m, no k-sparse plan covers every row\n";
    if (r.report.ties_detected) err << "warning: ties in the recovered plan\n";
    if (!r.report.converged) {
      err << "not converged: " << r.report.message << '\n';
      return kExitNotConverged;
    }
    return kExitOk;
  });
}

struct CompareRow {
  Formulation form = Formulation::Semidual;
  size_t reg_index = 0;
  Regularizer reg;
  std::string solver;
  double objective = 0.0;
  int iterations = 0;
  double wall_ms = 0.0;
  Index max_col_nnz = 0;
  Index nnz = 0;
  bool converged = false;
  std::optional<double> duality_gap;
};

/// Crosses formulations x regularizers x solvers on one problem. Writes
/// compare.csv and one trace per row; prints the table.
inline int cmd_compare(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    using namespace detail;
    json cfg = load_config(config_path);
    const json* regs = find(cfg, "regularizers", "");
    if (!regs || !regs->is_array() || regs->empty()) {
      throw ConfigError("regularizers: expected a nonempty array of regularizer objects");
    }
    // parse_problem wants a single regularizer section; the first one does.
    if (!cfg.contains("regularizer")) cfg["regularizer"] = (*regs)[0];
    const OTProblem base = parse_problem(cfg);

    std::vector<Formulation> forms;
    if (const json* f = find(cfg, "formulations", "")) {
      if (!f->is_array()) throw ConfigError("formulations: expected an array");
      for (const auto& v : *f) {
        forms.push_back(rethrow_as_config([&] { return formulation_from_string(as_string(v, "formulations")); }));
      }
    } else {
      forms = {Formulation::Dual, Formulation::Semidual};
    }
    std::vector<SolverConfig> solvers;
    if (const json* s = find(cfg, "solvers", "")) {
      if (!s->is_array()) throw ConfigError("solvers: expected an array");
      for (size_t q = 0; q < s->size(); ++q) solvers.push_back(parse_solver((*s)[q], "solvers[" + std::to_string(q) + "]"));
    } else {
      solvers.push_back(parse_solver(cfg.contains("solver") ? cfg["solver"] : json(), "solver"));
    }
    std::vector<Regularizer> reg_list;
    for (size_t q = 0; q < regs->size(); ++q) {
      reg_list.push_back(parse_regularizer((*regs)[q], "regularizers[" + std::to_string(q) + "]"));
      OTProblem probe = base;
      probe.reg = reg_list.back();
      rethrow_as_config([&] { return validate_problem(probe); });
    }
    const auto dir = prepare_output_dir(cfg);

    std::vector<CompareRow> rows;
    bool all_converged = true;
    for (size_t ri = 0; ri < reg_list.size(); ++ri) {
      OTProblem p = base;
      p.reg = reg_list[ri];
      for (Formulation form : forms) {
        if (form == Formulation::Dual && p.reg.kind == RegKind::None) {
          err << "skipping dual / " << p.reg.describe() << ": unsupported\n";
          continue;
        }
        const bool sinkhorn_row = form == Formulation::Dual && p.reg.kind == RegKind::Negentropy;
        for (size_t si = 0; si < solvers.size(); ++si) {
          if (sinkhorn_row && si > 0) break;  // solver-independent
          const SolveResult r = solve(p, form, solvers[si]);
          CompareRow row;
          row.form = form;
          row.reg_index = ri;
          row.reg = p.reg;
          row.solver = sinkhorn_row ? "sinkhorn" : std::string(to_string(solvers[si].method));
          row.objective = r.report.objective;
          row.iterations = r.report.iterations;
          row.wall_ms = r.report.trace.empty() ? 0.0 : r.report.trace.back().wall_ms;
          row.max_col_nnz = r.plan.max_col_nnz();
          row.nnz = r.plan.nnz();
          row.converged = r.report.converged;
          all_converged = all_converged && row.converged;
          char name[32];
          std::snprintf(name, sizeof name, "trace_%02zu.csv", rows.size());
          io::write_trace_csv((dir / name).string(), r.report.trace);
          rows.push_back(row);
        }
      }
    }
    // |D - S| between matching dual and semi-dual rows
    for (auto& row : rows) {
      if (row.form != Formulation::Semidual) continue;
      for (auto& other : rows) {
        if (other.form == Formulation::Dual && other.reg_index == row.reg_index &&
            (other.solver == row.solver || other.solver == "sinkhorn")) {
          const double gap = std::abs(other.objective - row.objective);
          row.duality_gap = gap;
          if (!other.duality_gap) other.duality_gap = gap;
          break;
        }
      }
    }

    std::ofstream csv(dir / "compare.csv");
    if (!csv) throw std::runtime_error("cannot write compare.csv");
    const char* header = "row,formulation,regularizer,solver,objective,iterations,wall_ms,max_col_nnz,nnz,converged,duality_gap\n";
    csv << header;
    out << header;
    for (size_t q = 0; q < rows.size(); ++q) {
      const auto& r = rows[q];
      std::ostringstream line;
      line << q << ',' << to_string(r.form) << ",\"" << r.reg.describe() << "\"," << r.solver << ','
           << io::format_double(r.objective) << ',' << r.iterations << ',' << io::format_double(r.wall_ms) << ','
           << r.max_col_nnz << ',' << r.nnz << ',' << (r.converged ? "true" : "false") << ','
           << (r.duality_gap ? io::format_double(*r.duality_gap) : std::string()) << '\n';
      csv << line.str();
      out << line.str();
    }
    return all_converged ? kExitOk : kExitNotConverged;
  });
}

inline void write_matrix_csv(const std::filesystem::path& path, const std::string& header, const Matrix& M) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << header << '\n';
  for (Index i = 0; i < M.rows(); ++i) {
    os << i;
    for (Index j = 0; j < M.cols(); ++j) os << ',' << io::format_double(M(i, j));
    os << '\n';
  }
}

/// Balanced clustering. Writes metrics.json, assignment.csv, centers.csv and
/// plan.csv.
inline int cmd_cluster(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    using namespace detail;
    const json cfg = load_config(config_path);
    const json* data = find(cfg, "data", "");
    if (!data || !data->is_object()) throw ConfigError("data: missing required section");
    Matrix X;
    if (const json* pts = find(*data, "points", "data")) {
      X = as_matrix(*pts, "data.points").transpose();
    } else {
      const std::string gen = get_string(*data, "generator", "data", "");
      if (gen != "blobs") throw ConfigError("data.generator: expected \"blobs\" or inline points");
      const json* sizes = find(*data, "sizes", "data");
      if (!sizes || !sizes->is_array()) throw ConfigError("data.sizes: expected an array of integers");
      std::vector<int> sz;
      for (const auto& v : *sizes) sz.push_back(static_cast<int>(as_int(v, "data.sizes")));
      X = rethrow_as_config([&] {
        return gen_blobs(sz, get_double(*data, "radius", "data", 6.0), get_double(*data, "spread", "data", 1.0),
                         static_cast<std::uint64_t>(get_int(*data, "seed", "data", 0)));
      });
    }

    const json* cj = find(cfg, "cluster", "");
    if (!cj || !cj->is_object()) throw ConfigError("cluster: missing required section");
    ClusterConfig cc;
    cc.n_clusters = require_int(*cj, "n_clusters", "cluster");
    cc.method = rethrow_as_config([&] { return cluster_method_from_string(get_string(*cj, "method", "cluster", "ot")); });
    cc.em_steps = get_int(*cj, "em_steps", "cluster", cc.em_steps);
    cc.seed = static_cast<std::uint64_t>(get_int(*cj, "seed", "cluster", 0));
    cc.init_std = get_double(*cj, "init_std", "cluster", cc.init_std);
    if (cc.n_clusters < 1) throw ConfigError("cluster.n_clusters: must be >= 1");
    if (cc.method == ClusterMethod::OptimalTransport) {
      const json* r = find(cfg, "regularizer", "");
      if (!r) throw ConfigError("regularizer: missing required section");
      cc.reg = parse_regularizer(*r, "regularizer", balanced_sparsity_k(X.cols(), cc.n_clusters));
      if (cc.reg.kind == RegKind::SparsityConstrained && (cc.reg.k < 1 || cc.reg.k > X.cols())) {
        throw ConfigError("regularizer.k: k out of range");
      }
    }
    if (cfg.contains("solver")) {
      cc.inner = parse_solver(cfg["solver"], "solver");
    } else {
      cc.inner.record_time = false;
    }
    rethrow_as_config([&] {
      cc.validate();
      return 0;
    });
    const auto dir = prepare_output_dir(cfg);

    const ClusterResult res = rethrow_as_config([&] { return balanced_cluster(X, cc); });
    json metrics;
    metrics["method"] = std::string(to_string(cc.method));
    if (cc.method == ClusterMethod::OptimalTransport) metrics["regularizer"] = cc.reg.describe();
    metrics["avg_cost"] = res.metrics.avg_cost;
    metrics["kl_to_uniform"] = res.metrics.kl_to_uniform;
    metrics["sizes"] = res.metrics.sizes;
    metrics["reinitialized"] = res.reinitialized;
    metrics["inner_unconverged"] = res.inner_unconverged;
    metrics["ties_detected"] = res.ties;
    write_json(dir / "metrics.json", metrics);
    {
      std::ofstream os(dir / "assignment.csv");
      os << "i,cluster\n";
      for (size_t i = 0; i < res.assignment.size(); ++i) os << i << ',' << res.assignment[i] << '\n';
    }
    std::string header = "j";
    for (Index r = 0; r < res.centers.rows(); ++r) header += ",x" + std::to_string(r);
    write_matrix_csv(dir / "centers.csv", header, res.centers.transpose());
    io::write_plan_csv((dir / "plan.csv").string(), res.plan);

    out << "avg_cost " << io::format_double(res.metrics.avg_cost) << '\n'
        << "kl_to_uniform " << io::format_double(res.metrics.kl_to_uniform) << '\n';
    if (res.inner_unconverged > 0) {
      err << "not converged: " << res.inner_unconverged << " E-step solve(s) hit max_iter\n";
      return kExitNotConverged;
    }
    return kExitOk;
  });
}

/// Capacity-constrained routing. Writes gating.csv, trace.csv and
/// metrics.json.
inline int cmd_route(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    using namespace detail;
    const json cfg = load_config(config_path);
    const json* aj = find(cfg, "affinity", "");
    if (!aj) throw ConfigError("affinity: missing required field");
    Matrix A;
    if (aj->is_array()) {
      A = as_matrix(*aj, "affinity");
    } else if (aj->is_object()) {
      const std::string gen = get_string(*aj, "generator", "affinity", "");
      const int tokens = require_int(*aj, "tokens", "affinity");
      const int experts = require_int(*aj, "experts", "affinity");
      if (tokens < 1 || experts < 1) throw ConfigError("affinity.tokens: tokens and experts must be >= 1");
      if (gen == "uniform") {
        A = Matrix::Zero(tokens, experts);
      } else if (gen == "random") {
        std::mt19937_64 rng(static_cast<std::uint64_t>(get_int(*aj, "seed", "affinity", 0)));
        std::normal_distribution<double> normal(0.0, get_double(*aj, "scale", "affinity", 1.0));
        A.resize(tokens, experts);
        for (Index i = 0; i < tokens; ++i) {
          for (Index j = 0; j < experts; ++j) A(i, j) = normal(rng);
        }
      } else {
        throw ConfigError("affinity.generator: expected \"uniform\" or \"random\"");
      }
    } else {
      throw ConfigError("affinity: expected rows or a generator object");
    }

    const json* rj = find(cfg, "router", "");
    if (!rj || !rj->is_object()) throw ConfigError("router: missing required section");
    RouterConfig rc;
    rc.capacity = require_int(*rj, "capacity", "router");
    rc.num_experts = get_int(*rj, "num_experts", "router", 0);
    rc.gamma = get_double(*rj, "gamma", "router", rc.gamma);
    rc.adam_steps = get_int(*rj, "adam_steps", "router", rc.adam_steps);
    rc.adam_lr = get_double(*rj, "lr", "router", rc.adam_lr);
    rc.refine = get_bool(*rj, "refine", "router", rc.refine);
    rc.refine_max_iter = get_int(*rj, "refine_max_iter", "router", rc.refine_max_iter);
    rc.tol = get_double(*rj, "tol", "router", rc.tol);
    rc.resolve_ties = get_bool(*rj, "resolve_ties", "router", rc.resolve_ties);
    rc.record_time = get_bool(*rj, "record_time", "router", false);
    const auto dir = prepare_output_dir(cfg);

    const GatingResult g = rethrow_as_config([&] { return moe_gating(A, rc); });
    const Index m = A.rows();
    const Index n = A.cols();
    const Vector row_mass = g.gating.rowwise().sum();
    const Vector col_mass = g.gating.colwise().sum().transpose();
    std::vector<Index> tokens_per_expert(static_cast<size_t>(n));
    for (Index j = 0; j < n; ++j) {
      tokens_per_expert[static_cast<size_t>(j)] = (g.gating.col(j).array().abs() > kNonzeroThreshold).count();
    }
    const double row_err = (row_mass.array() - 1.0).abs().maxCoeff();
    const double col_err = (col_mass.array() - static_cast<double>(m) / static_cast<double>(n)).abs().maxCoeff();

    io::write_plan_csv((dir / "gating.csv").string(), g.gating);
    io::write_trace_csv((dir / "trace.csv").string(), g.report.trace);
    json metrics;
    metrics["tokens"] = m;
    metrics["experts"] = n;
    metrics["capacity"] = rc.capacity;
    metrics["tokens_per_expert"] = tokens_per_expert;
    metrics["expert_mass"] = std::vector<double>(col_mass.data(), col_mass.data() + n);
    metrics["row_mass_err"] = row_err;
    metrics["col_mass_err"] = col_err;
    metrics["objective_semidual"] = g.report.objective;
    metrics["iterations"] = g.report.iterations;
    metrics["solver_converged"] = g.report.converged;
    metrics["ties_detected"] = g.ties;
    metrics["repaired"] = g.repaired;
    if (!g.diagnostic.empty()) metrics["diagnostic"] = g.diagnostic;
    write_json(dir / "metrics.json", metrics);

    out << "max_tokens_per_expert " << *std::max_element(tokens_per_expert.begin(), tokens_per_expert.end())
        << '\n'
        << "row_mass_err " << io::format_double(row_err) << '\n'
        << "col_mass_err " << io::format_double(col_err) << '\n';
    if (row_err > rc.tol) {
      err << "not converged: token mass error " << row_err << " exceeds tol\n";
      return kExitNotConverged;
    }
    return kExitOk;
  });
}

}  // namespace sparseot::cli
