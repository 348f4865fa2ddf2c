#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "soltop/mesh.hpp"
#include "soltop/sparse.hpp"

namespace soltop {

// Raw or filtered per-active-element design values in [0,1].
using DensityField = std::vector<double>;

struct CellParams {
  double sigma_metal = 100.0;   // sheet conductance of electrode, S
  double sigma_min = 0.02;      // sheet conductance of bare surface, S
  double j_light = 310.0;       // photo-illumination current density, A/m^2
  double j0 = 0.06;             // reverse-bias current density magnitude, A/m^2
  double v_bus = 0.5;           // busbar voltage, V
  double temperature = 320.0;   // K, informational
  double p_in = 1000.0;         // incident power density, W/m^2
  double v_thermal = 0.0;       // diode exponent voltage scale, V; see default_params()
  double simp_power = 3.0;
  double exp_clamp = 40.0;      // max exponent argument

  void validate() const {
    if (!(sigma_metal > sigma_min) || !(sigma_min > 0.0))
      throw ConfigError("cell: need sigma_metal > sigma_min > 0");
    if (!(j_light > 0.0)) throw ConfigError("cell: j_light must be positive");
    if (j0 < 0.0) throw ConfigError("cell: j0 magnitude must be >= 0");
    if (!(v_thermal > 0.0)) throw ConfigError("cell: v_thermal must be positive");
    if (!(v_bus > 0.0)) throw ConfigError("cell: busbar voltage must be positive");
    if (!(p_in > 0.0)) throw ConfigError("cell: p_in must be positive");
  }
};

// v_thermal such that the dark current at v_bus hits target_jd.
inline double calibrate_v_thermal(double v_bus, double j0, double target_jd) {
  if (j0 <= 0.0) throw ConfigError("calibration: j0 must be positive");
  if (target_jd <= 0.0) throw ConfigError("calibration: target dark current must be positive");
  return v_bus / std::log(target_jd / j0 + 1.0);
}

inline CellParams default_params(double diode_target = 40.0) {
  CellParams p;
  if (diode_target >= p.j_light)
    throw ConfigError("calibration: target dark current must be below j_light");
  p.v_thermal = calibrate_v_thermal(p.v_bus, p.j0, diode_target);
  return p;
}

inline double sheet_conductance(double xt, const CellParams& p) {
  return p.sigma_min + std::pow(xt, p.simp_power) * (p.sigma_metal - p.sigma_min);
}

inline double sheet_conductance_deriv(double xt, const CellParams& p) {
  return p.simp_power * std::pow(xt, p.simp_power - 1.0) * (p.sigma_metal - p.sigma_min);
}

// Shading: metal coverage blocks photo-generation linearly.
inline double generation_density(double xt, const CellParams& p) {
  return p.j_light * (1.0 - xt);
}

inline double diode_density(double v, const CellParams& p) {
  const double a = std::min(v / p.v_thermal, p.exp_clamp);
  return p.j0 * (std::exp(a) - 1.0);
}

inline double diode_density_deriv(double v, const CellParams& p) {
  const double a = v / p.v_thermal;
  if (a >= p.exp_clamp) return 0.0;  // clamped branch is flat
  return p.j0 / p.v_thermal * std::exp(a);
}

// Conductance matrix of one bilinear quad with unit sheet conductance,
// node order (0,0),(hx,0),(hx,hy),(0,hy).
inline std::array<std::array<double, 4>, 4> unit_quad_conductance(double hx, double hy) {
  const double rx = hy / (6.0 * hx);  // d/dx terms
  const double ry = hx / (6.0 * hy);  // d/dy terms
  const std::array<std::array<double, 4>, 4> kx = {{{2, -2, -1, 1},
                                                    {-2, 2, 1, -1},
                                                    {-1, 1, 2, -2},
                                                    {1, -1, -2, 2}}};
  const std::array<std::array<double, 4>, 4> ky = {{{2, 1, -1, -2},
                                                    {1, 2, -2, -1},
                                                    {-1, -2, 2, 1},
                                                    {-2, -1, 1, 2}}};
  std::array<std::array<double, 4>, 4> k{};
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) k[a][b] = rx * kx[a][b] + ry * ky[a][b];
  return k;
}

inline CsrMatrix assemble_conductance(const Mesh& mesh, const DensityField& xt,
                                      const CellParams& p) {
  const auto ke = unit_quad_conductance(mesh.hx, mesh.hy);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_elems()) * 16);
  for (int e = 0; e < mesh.n_elems(); ++e) {
    const double sigma = sheet_conductance(xt[e], p);
    const auto& nd = mesh.elem_nodes[e];
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trips.push_back({nd[a], nd[b], sigma * ke[a][b]});
  }
  return csr_from_triplets(mesh.n_nodes(), trips);
}

// Per-node quarter of the adjacent active element area: the lumping weight
// for all areal current terms.
inline std::vector<double> node_lump_area(const Mesh& mesh) {
  std::vector<double> w(mesh.n_nodes(), 0.0);
  const double q = mesh.elem_area() / 4.0;
  for (int e = 0; e < mesh.n_elems(); ++e)
    for (int n : mesh.elem_nodes[e]) w[n] += q;
  return w;
}

// Per-node lumped photo-generation current (amperes), independent of V.
inline std::vector<double> node_generation(const Mesh& mesh, const DensityField& xt,
                                           const CellParams& p) {
  std::vector<double> g(mesh.n_nodes(), 0.0);
  const double q = mesh.elem_area() / 4.0;
  for (int e = 0; e < mesh.n_elems(); ++e) {
    const double jg = q * generation_density(xt[e], p);
    for (int n : mesh.elem_nodes[e]) g[n] += jg;
  }
  return g;
}

// Nodal current vector I(V): generation minus dark current, 4-way lumped.
inline std::vector<double> source_current(const Mesh& mesh, const DensityField& xt,
                                          const std::vector<double>& v, const CellParams& p) {
  std::vector<double> cur = node_generation(mesh, xt, p);
  const std::vector<double> lump = node_lump_area(mesh);
  for (int n = 0; n < mesh.n_nodes(); ++n) cur[n] -= lump[n] * diode_density(v[n], p);
  return cur;
}

struct SolveOptions {
  double newton_tol = 1e-10;       // relative residual
  int newton_max_iter = 50;
  double linear_tol = 1e-12;       // relative residual of inner PCG
  int linear_max_iter = 0;         // 0 means 10 * n_free
  bool backtracking = true;
  int max_halvings = 20;

  void validate() const {
    if (!(newton_tol > 0.0) || !(linear_tol > 0.0))
      throw ConfigError("solve: tolerances must be positive");
    if (newton_max_iter < 1) throw ConfigError("solve: newton_max_iter must be >= 1");
  }
};

struct SolveResult {
  std::vector<double> v;           // nodal voltages, volts
  double busbar_current = 0.0;     // amperes, positive when delivering
  double power = 0.0;              // watts
  double efficiency = 0.0;         // percent
  int newton_iters = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  bool converged = false;
  std::vector<double> residual_history;
};

inline double output_power(const CellParams& p, double i_bus) { return p.v_bus * i_bus; }

inline double efficiency(const CellParams& p, const Mesh& mesh, double p_out) {
  return 100.0 * p_out / (mesh.active_area() * p.p_in);
}

namespace detail {

inline std::vector<int> full_to_free_map(const Mesh& mesh) {
  std::vector<int> map(mesh.n_nodes(), -1);
  for (std::size_t i = 0; i < mesh.free_nodes.size(); ++i) map[mesh.free_nodes[i]] = static_cast<int>(i);
  return map;
}

// G V evaluated as G (V - v_bus); identical since G annihilates constants,
// but avoids the large cancellation between O(sigma) row entries.
inline void conduction_flux(const CsrMatrix& g, const std::vector<double>& v, double v_bus,
                            std::vector<double>& voff, std::vector<double>& gv) {
  voff.resize(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) voff[n] = v[n] - v_bus;
  g.multiply(voff, gv);
}

// Residual R = G V - I(V) restricted to free nodes.
inline void free_residual(const Mesh& mesh, const CsrMatrix& g,
                          const std::vector<double>& node_gen, const std::vector<double>& lump,
                          const std::vector<double>& v, const CellParams& p,
                          const std::vector<double>* extra_current, std::vector<double>& voff,
                          std::vector<double>& gv, std::vector<double>& rf) {
  conduction_flux(g, v, p.v_bus, voff, gv);
  rf.resize(mesh.free_nodes.size());
  for (std::size_t i = 0; i < mesh.free_nodes.size(); ++i) {
    const int n = mesh.free_nodes[i];
    double inj = node_gen[n] - lump[n] * diode_density(v[n], p);
    if (extra_current) inj += (*extra_current)[n];
    rf[i] = gv[n] - inj;
  }
}

}  // namespace detail

// Damped Newton on the free nodes of G V = I(V), Dirichlet nodes pinned at
// v_bus. Initial guess V = v_bus everywhere. Inner solves are Jacobi-PCG on
// the free-node block, which stays SPD because the diode Jacobian is a
// nonnegative diagonal. Optional extra nodal current adds a fixed external
// injection (used by sensitivity probes).
inline SolveResult newton_solve(const Mesh& mesh, const DensityField& xt, const CellParams& p,
                                const SolveOptions& opts = {},
                                const std::vector<double>* extra_current = nullptr) {
  p.validate();
  opts.validate();
  if (!mesh.has_busbar()) throw ConfigError("solve: mesh has no busbar node set");
  if (xt.size() != static_cast<std::size_t>(mesh.n_elems()))
    throw ConfigError("solve: density field size mismatch");

  const int n_free = static_cast<int>(mesh.free_nodes.size());
  const int lin_max = opts.linear_max_iter > 0 ? opts.linear_max_iter : 10 * std::max(n_free, 1);

  SolveResult res;
  res.v.assign(mesh.n_nodes(), p.v_bus);

  const CsrMatrix g = assemble_conductance(mesh, xt, p);
  const std::vector<double> node_gen = node_generation(mesh, xt, p);
  const std::vector<double> lump = node_lump_area(mesh);
  const std::vector<int> f2f = detail::full_to_free_map(mesh);
  const CsrMatrix gff = csr_submatrix(g, mesh.free_nodes, f2f);

  // Roundoff floor for the residual norm: at a constructed exact fixed point
  // the evaluated residual is summation noise, not a solver failure.
  double scale_sq = 0.0;
  for (int n : mesh.free_nodes) {
    const double s = std::abs(node_gen[n]) + lump[n] * std::abs(diode_density(p.v_bus, p));
    scale_sq += s * s;
  }
  const double abs_floor = 1e-13 * std::sqrt(scale_sq);

  std::vector<double> voff, gv, rf, rf_trial, diag_extra(n_free), delta, v_trial(mesh.n_nodes());
  detail::free_residual(mesh, g, node_gen, lump, res.v, p, extra_current, voff, gv, rf);
  double rnorm = norm2(rf);
  res.initial_residual = rnorm;
  res.residual_history.push_back(rnorm);
  const double target = std::max(opts.newton_tol * rnorm, abs_floor);

  if (rnorm <= target) {
    res.converged = true;
  } else {
    for (int it = 1; it <= opts.newton_max_iter; ++it) {
      for (int i = 0; i < n_free; ++i) {
        const int n = mesh.free_nodes[i];
        diag_extra[i] = lump[n] * diode_density_deriv(res.v[n], p);
      }
      std::vector<double> rhs(n_free);
      for (int i = 0; i < n_free; ++i) rhs[i] = -rf[i];
      const PcgReport lin = pcg_solve(gff, diag_extra, rhs, delta, opts.linear_tol, lin_max);
      if (!lin.converged && lin.relative_residual > 1e-6) {
        res.newton_iters = it;
        break;  // inner solve failed badly; report non-convergence
      }

      double alpha = 1.0;
      double trial_norm = std::numeric_limits<double>::infinity();
      for (int h = 0; h <= (opts.backtracking ? opts.max_halvings : 0); ++h) {
        v_trial = res.v;
        for (int i = 0; i < n_free; ++i) v_trial[mesh.free_nodes[i]] += alpha * delta[i];
        detail::free_residual(mesh, g, node_gen, lump, v_trial, p, extra_current, voff, gv,
                              rf_trial);
        trial_norm = norm2(rf_trial);
        if (trial_norm < rnorm || !opts.backtracking) break;
        alpha *= 0.5;
      }
      res.v = v_trial;
      rf = rf_trial;
      rnorm = trial_norm;
      res.newton_iters = it;
      res.residual_history.push_back(rnorm);
      if (rnorm <= target) {
        res.converged = true;
        break;
      }
    }
  }
  res.final_residual = rnorm;

  // Busbar current: external current delivered at the Dirichlet nodes,
  // I_bus = sum over busbar nodes of (I(V) - G V).
  detail::conduction_flux(g, res.v, p.v_bus, voff, gv);
  double i_bus = 0.0;
  for (int n : mesh.busbar_nodes) {
    double inj = node_gen[n] - lump[n] * diode_density(res.v[n], p);
    if (extra_current) inj += (*extra_current)[n];
    i_bus += inj - gv[n];
  }
  res.busbar_current = i_bus;
  res.power = output_power(p, i_bus);
  res.efficiency = efficiency(p, mesh, res.power);
  return res;
}

// Standalone busbar current for an already-solved state.
inline double busbar_current(const Mesh& mesh, const DensityField& xt,
                             const std::vector<double>& v, const CellParams& p) {
  const CsrMatrix g = assemble_conductance(mesh, xt, p);
  std::vector<double> voff, gv;
  detail::conduction_flux(g, v, p.v_bus, voff, gv);
  const std::vector<double> cur = source_current(mesh, xt, v, p);
  double i_bus = 0.0;
  for (int n : mesh.busbar_nodes) i_bus += cur[n] - gv[n];
  return i_bus;
}

// Zero-resistance lumped cell: efficiency ceiling at the operating voltage.
inline double ideal_efficiency(const CellParams& p) {
  const double j_net = p.j_light - diode_density(p.v_bus, p);
  return 100.0 * p.v_bus * j_net / p.p_in;
}

struct IdealCellReport {
  double eta_ideal = 0.0;   // percent, ceiling at v_bus
  double v_thermal = 0.0;   // calibrated diode voltage scale
};

// Calibration oracle: pick v_thermal so the dark current at v_bus equals
// target_jd, then report the resulting lumped-model ceiling.
inline IdealCellReport ideal_cell_oracle(const CellParams& params, double target_jd = 40.0) {
  if (target_jd >= params.j_light)
    throw ConfigError("calibration: target dark current must be below j_light");
  IdealCellReport rep;
  rep.v_thermal = calibrate_v_thermal(params.v_bus, params.j0, target_jd);
  CellParams p = params;
  p.v_thermal = rep.v_thermal;
  rep.eta_ideal = ideal_efficiency(p);
  return rep;
}

}  // namespace soltop
