#pragma once

// Plan and trace CSV files. Numbers are written with 17 significant digits,
// so a plan read back is bit-identical to the one written.

#include "sparseot/core.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace sparseot::io {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// "# m,n,nnz", then "i,j,value" and one line per entry above the nonzero
/// threshold in row-major order.
inline void write_plan_csv(std::ostream& os, const Matrix& T) {
  Index nnz = 0;
  for (Index i = 0; i < T.rows(); ++i) {
    for (Index j = 0; j < T.cols(); ++j) nnz += std::abs(T(i, j)) > kNonzeroThreshold;
  }
  os << "# " << T.rows() << ',' << T.cols() << ',' << nnz << '\n';
  os << "i,j,value\n";
  for (Index i = 0; i < T.rows(); ++i) {
    for (Index j = 0; j < T.cols(); ++j) {
      if (std::abs(T(i, j)) > kNonzeroThreshold) os << i << ',' << j << ',' << format_double(T(i, j)) << '\n';
    }
  }
}

inline Matrix read_plan_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) {
    throw std::runtime_error("plan csv: missing '# m,n,nnz' line");
  }
  long long m = 0;
  long long n = 0;
  long long nnz = 0;
  if (std::sscanf(line.c_str(), "# %lld,%lld,%lld", &m, &n, &nnz) != 3 || m < 0 || n < 0) {
    throw std::runtime_error("plan csv: malformed size line '" + line + "'");
  }
  if (!std::getline(is, line) || line != "i,j,value") throw std::runtime_error("plan csv: missing header");
  Matrix T = Matrix::Zero(m, n);
  long long count = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    long long i = 0;
    long long j = 0;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error("plan csv: malformed entry '" + line + "'");
    }
    i = std::stoll(line.substr(0, c1));
    j = std::stoll(line.substr(c1 + 1, c2 - c1 - 1));
    if (i < 0 || i >= m || j < 0 || j >= n) throw std::runtime_error("plan csv: index out of range");
    T(i, j) = std::strtod(line.c_str() + c2 + 1, nullptr);
    ++count;
  }
  if (count != nnz) throw std::runtime_error("plan csv: entry count does not match the size line");
  return T;
}

inline void write_plan_csv(const std::string& path, const Matrix& T) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_plan_csv(os, T);
}

inline Matrix read_plan_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_plan_csv(is);
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceEntry>& trace) {
  os << "iter,objective,grad_norm,wall_ms\n";
  for (const auto& e : trace) {
    os << e.iter << ',' << format_double(e.objective) << ',' << format_double(e.grad_norm) << ','
       << format_double(e.wall_ms) << '\n';
  }
}

inline void write_trace_csv(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_trace_csv(os, trace);
}

}  // namespace sparseot::io
