#pragma once

#include <vector>

#include "soltop/filter.hpp"
#include "soltop/physics.hpp"

namespace soltop {

// dP/dx̃ per active element, watts per unit density.
using GradientField = std::vector<double>;

// Solves J^T lambda = (dP/dV)^T on the free nodes, where
// P = v_bus * sum_busbar (I(V) - G V) and J is the Newton Jacobian at the
// converged state. J is symmetric, so the same PCG path is reused. Returns a
// full-length vector with zeros at busbar nodes.
inline std::vector<double> adjoint_solve(const Mesh& mesh, const DensityField& xt,
                                         const SolveResult& solve, const CellParams& p,
                                         const SolveOptions& opts = {}) {
  const CsrMatrix g = assemble_conductance(mesh, xt, p);
  const std::vector<double> lump = node_lump_area(mesh);
  const std::vector<int> f2f = detail::full_to_free_map(mesh);
  const CsrMatrix gff = csr_submatrix(g, mesh.free_nodes, f2f);
  const int n_free = static_cast<int>(mesh.free_nodes.size());

  // dP/dV_f = -v_bus * (column sums of G over busbar rows): only the busbar
  // rows of G depend on the free voltages inside P.
  std::vector<double> ind(mesh.n_nodes(), 0.0);
  for (int n : mesh.busbar_nodes) ind[n] = 1.0;
  const std::vector<double> g_ind = g.multiply(ind);  // symmetric: row == column sums
  std::vector<double> rhs(n_free);
  for (int i = 0; i < n_free; ++i) rhs[i] = -p.v_bus * g_ind[mesh.free_nodes[i]];

  std::vector<double> diag_extra(n_free);
  for (int i = 0; i < n_free; ++i) {
    const int n = mesh.free_nodes[i];
    diag_extra[i] = lump[n] * diode_density_deriv(solve.v[n], p);
  }

  const int lin_max = opts.linear_max_iter > 0 ? opts.linear_max_iter : 10 * std::max(n_free, 1);
  std::vector<double> lam_f;
  const PcgReport rep = pcg_solve(gff, diag_extra, rhs, lam_f, opts.linear_tol, lin_max);
  if (!rep.converged && rep.relative_residual > 1e-8)
    throw SolverError("adjoint: PCG stalled at relative residual " +
                      std::to_string(rep.relative_residual));

  std::vector<double> lam(mesh.n_nodes(), 0.0);
  for (int i = 0; i < n_free; ++i) lam[mesh.free_nodes[i]] = lam_f[i];
  return lam;
}

// Total derivative dP/dx̃. With the extended multiplier Lambda (v_bus at
// busbar nodes, lambda at free nodes) the Dirichlet-row contributions of the
// objective fold into one element loop:
//   dP/dx̃_e = -sum_{n in e} Lambda_n * (sigma'(x̃_e) (K_e V_e)_n + (A_e/4) j_L)
inline GradientField total_gradient(const Mesh& mesh, const DensityField& xt,
                                    const SolveResult& solve, const std::vector<double>& lambda,
                                    const CellParams& p) {
  const auto ke = unit_quad_conductance(mesh.hx, mesh.hy);
  const double quarter_area = mesh.elem_area() / 4.0;

  std::vector<double> ext(mesh.n_nodes());
  for (int n = 0; n < mesh.n_nodes(); ++n)
    ext[n] = mesh.node_is_busbar[n] ? p.v_bus : lambda[n];

  GradientField grad(mesh.n_elems(), 0.0);
  for (int e = 0; e < mesh.n_elems(); ++e) {
    const auto& nd = mesh.elem_nodes[e];
    const double dsigma = sheet_conductance_deriv(xt[e], p);
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
      double kv = 0.0;  // K_e annihilates constants; offset by v_bus for accuracy
      for (int b = 0; b < 4; ++b) kv += ke[a][b] * (solve.v[nd[b]] - p.v_bus);
      acc += ext[nd[a]] * (dsigma * kv + quarter_area * p.j_light);
    }
    grad[e] = -acc;
  }
  return grad;
}

// Convenience: adjoint gradient of P with respect to the filtered densities,
// then chained through the filter transpose to raw densities.
inline GradientField raw_gradient(const Mesh& mesh, const FilterOperator& f,
                                  const DensityField& x_raw, const CellParams& p,
                                  const SolveOptions& opts, SolveResult* out_solve = nullptr) {
  const DensityField xt = f.apply(x_raw);
  SolveResult solve = newton_solve(mesh, xt, p, opts);
  if (!solve.converged) throw SolverError("raw_gradient: state solve did not converge");
  const std::vector<double> lam = adjoint_solve(mesh, xt, solve, p, opts);
  GradientField gf = total_gradient(mesh, xt, solve, lam, p);
  if (out_solve) *out_solve = std::move(solve);
  return f.adjoint_apply(gf);
}

// Central finite differences of P with respect to the RAW densities, taken
// through filter and physics. Probe solves run at tightened tolerance so the
// FD noise floor sits below the comparison tolerances.
inline std::vector<double> fd_gradient_oracle(const Mesh& mesh, const FilterOperator& f,
                                              const DensityField& x_raw, const CellParams& p,
                                              const std::vector<int>& elements, double h,
                                              SolveOptions opts = {}) {
  opts.newton_tol = 1e-12;
  auto power_of = [&](const DensityField& x) {
    const DensityField xt = f.apply(x);
    const SolveResult s = newton_solve(mesh, xt, p, opts);
    if (!s.converged) throw SolverError("fd oracle: probe solve did not converge");
    return s.power;
  };
  std::vector<double> g;
  g.reserve(elements.size());
  DensityField x = x_raw;
  for (int e : elements) {
    if (x_raw[e] < h || x_raw[e] > 1.0 - h)
      throw ConfigError("fd oracle: probed density must lie in [h, 1-h]");
    x[e] = x_raw[e] + h;
    const double p_plus = power_of(x);
    x[e] = x_raw[e] - h;
    const double p_minus = power_of(x);
    x[e] = x_raw[e];
    g.push_back((p_plus - p_minus) / (2.0 * h));
  }
  return g;
}

}  // namespace soltop
