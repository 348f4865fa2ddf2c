#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "soltop/common.hpp"

namespace soltop {

// Compressed sparse row matrix. Symmetric matrices store both triangles so
// matvec stays a plain row sweep.
struct CsrMatrix {
  int n = 0;
  std::vector<int> row_ptr;  // size n+1
  std::vector<int> col;      // size nnz, ascending within each row
  std::vector<double> val;   // size nnz

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(n, 0.0);
    for (int r = 0; r < n; ++r) {
      double s = 0.0;
      for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
      y[r] = s;
    }
  }

  std::vector<double> multiply(const std::vector<double>& x) const {
    std::vector<double> y;
    multiply(x, y);
    return y;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(n, 0.0);
    for (int r = 0; r < n; ++r)
      for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
        if (col[k] == r) d[r] = val[k];
    return d;
  }
};

struct Triplet {
  int row, col;
  double value;
};

// Duplicate (row,col) entries are summed. Triplet order does not affect the
// result, so assembly stays deterministic regardless of element order.
inline CsrMatrix csr_from_triplets(int n, std::vector<Triplet> trips) {
  std::sort(trips.begin(), trips.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  CsrMatrix m;
  m.n = n;
  m.row_ptr.assign(n + 1, 0);
  for (std::size_t i = 0; i < trips.size();) {
    std::size_t j = i + 1;
    double s = trips[i].value;
    while (j < trips.size() && trips[j].row == trips[i].row && trips[j].col == trips[i].col) {
      s += trips[j].value;
      ++j;
    }
    m.col.push_back(trips[i].col);
    m.val.push_back(s);
    ++m.row_ptr[trips[i].row + 1];
    i = j;
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

// Extract the principal submatrix A(keep, keep). `full_to_sub` maps full
// indices to submatrix indices, -1 for dropped rows/columns.
inline CsrMatrix csr_submatrix(const CsrMatrix& a, const std::vector<int>& keep,
                               const std::vector<int>& full_to_sub) {
  CsrMatrix m;
  m.n = static_cast<int>(keep.size());
  m.row_ptr.assign(m.n + 1, 0);
  for (int r = 0; r < m.n; ++r) {
    const int fr = keep[r];
    for (int k = a.row_ptr[fr]; k < a.row_ptr[fr + 1]; ++k) {
      const int c = full_to_sub[a.col[k]];
      if (c >= 0) {
        m.col.push_back(c);
        m.val.push_back(a.val[k]);
        ++m.row_ptr[r + 1];
      }
    }
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

struct PcgReport {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

// Jacobi-preconditioned conjugate gradients for (A + diag(extra)) x = b.
// `extra` may be empty. Stops on ||r|| <= tol * ||b||; x0 = 0.
inline PcgReport pcg_solve(const CsrMatrix& a, const std::vector<double>& extra,
                           const std::vector<double>& b, std::vector<double>& x,
                           double tol, int max_iter) {
  const int n = a.n;
  x.assign(n, 0.0);
  const double bnorm = norm2(b);
  PcgReport rep;
  if (bnorm == 0.0) {
    rep.converged = true;
    return rep;
  }

  std::vector<double> diag = a.diagonal();
  if (!extra.empty())
    for (int i = 0; i < n; ++i) diag[i] += extra[i];
  std::vector<double> inv_diag(n);
  for (int i = 0; i < n; ++i) inv_diag[i] = diag[i] != 0.0 ? 1.0 / diag[i] : 1.0;

  std::vector<double> r = b;  // r = b - A*0
  std::vector<double> z(n), p(n), q(n);
  for (int i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  p = z;
  double rz = dot(r, z);
  double rnorm = bnorm;

  for (int it = 1; it <= max_iter; ++it) {
    a.multiply(p, q);
    if (!extra.empty())
      for (int i = 0; i < n; ++i) q[i] += extra[i] * p[i];
    const double pq = dot(p, q);
    if (pq <= 0.0) break;  // lost positive definiteness
    const double alpha = rz / pq;
    for (int i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rnorm = norm2(r);
    rep.iterations = it;
    if (rnorm <= tol * bnorm) {
      rep.converged = true;
      break;
    }
    for (int i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  rep.relative_residual = rnorm / bnorm;
  return rep;
}

}  // namespace soltop
