#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "soltop/common.hpp"

namespace soltop {

struct GridSpec {
  int nx = 0, ny = 0;   // element counts
  double lx = 0.0, ly = 0.0;  // physical extent in meters

  void validate() const {
    if (nx < 2 || ny < 2) throw ConfigError("grid: nx and ny must be >= 2");
    if (!(lx > 0.0) || !(ly > 0.0)) throw ConfigError("grid: lx and ly must be positive");
  }
};

enum class ShapeKind { Square, LowerLeftTriangle, Bitmap };

struct ShapeMask {
  ShapeKind kind = ShapeKind::Square;
  // row-major j*nx+i, nonzero = active; only used for Bitmap
  std::vector<std::uint8_t> bitmap;

  bool active(int i, int j, int nx) const {
    switch (kind) {
      case ShapeKind::Square: return true;
      case ShapeKind::LowerLeftTriangle: return i + j <= nx - 1;
      case ShapeKind::Bitmap: return bitmap[static_cast<std::size_t>(j) * nx + i] != 0;
    }
    return false;
  }
};

enum class Edge { Left, Right, Top, Bottom };

struct BusbarSegment {
  Edge edge = Edge::Left;
  double start = 0.0;   // meters along the edge
  double length = 0.0;  // meters
};

struct BusbarSpec {
  std::vector<BusbarSegment> segments;
  double voltage = 0.5;
};

// Structured quad mesh restricted to the active elements of a shape mask.
// Node ids are compact: nodes touched only by inactive elements do not exist.
struct Mesh {
  int nx = 0, ny = 0;
  double lx = 0.0, ly = 0.0;
  double hx = 0.0, hy = 0.0;

  std::vector<double> node_x, node_y;            // compact node coordinates
  std::vector<int> grid_to_node;                 // (nx+1)*(ny+1) -> compact id or -1
  std::vector<std::array<int, 4>> elem_nodes;    // ccw: (i,j),(i+1,j),(i+1,j+1),(i,j+1)
  std::vector<int> elem_ix, elem_iy;             // grid position of each active element
  std::vector<int> elem_grid_to_active;          // nx*ny -> active index or -1

  std::vector<int> busbar_nodes;                 // sorted compact ids
  std::vector<int> free_nodes;                   // sorted compact ids
  std::vector<std::uint8_t> node_is_busbar;      // per compact node

  int n_nodes() const { return static_cast<int>(node_x.size()); }
  int n_elems() const { return static_cast<int>(elem_nodes.size()); }
  double elem_area() const { return hx * hy; }
  double active_area() const { return elem_area() * n_elems(); }
  bool has_busbar() const { return !busbar_nodes.empty(); }

  int node_at(int i, int j) const { return grid_to_node[static_cast<std::size_t>(j) * (nx + 1) + i]; }
};

inline Mesh build_grid(const GridSpec& spec, const ShapeMask& mask) {
  spec.validate();
  if (mask.kind == ShapeKind::Bitmap &&
      mask.bitmap.size() != static_cast<std::size_t>(spec.nx) * spec.ny)
    throw ConfigError("shape: bitmap dimensions must equal (nx, ny)");

  Mesh m;
  m.nx = spec.nx;
  m.ny = spec.ny;
  m.lx = spec.lx;
  m.ly = spec.ly;
  m.hx = spec.lx / spec.nx;
  m.hy = spec.ly / spec.ny;

  const int nnx = spec.nx + 1, nny = spec.ny + 1;
  std::vector<std::uint8_t> node_used(static_cast<std::size_t>(nnx) * nny, 0);
  m.elem_grid_to_active.assign(static_cast<std::size_t>(spec.nx) * spec.ny, -1);

  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i)
      if (mask.active(i, j, spec.nx)) {
        m.elem_grid_to_active[static_cast<std::size_t>(j) * spec.nx + i] =
            static_cast<int>(m.elem_ix.size());
        m.elem_ix.push_back(i);
        m.elem_iy.push_back(j);
        node_used[static_cast<std::size_t>(j) * nnx + i] = 1;
        node_used[static_cast<std::size_t>(j) * nnx + i + 1] = 1;
        node_used[static_cast<std::size_t>(j + 1) * nnx + i] = 1;
        node_used[static_cast<std::size_t>(j + 1) * nnx + i + 1] = 1;
      }

  if (m.elem_ix.empty()) throw ConfigError("shape: active element set is empty");

  m.grid_to_node.assign(static_cast<std::size_t>(nnx) * nny, -1);
  for (int j = 0; j < nny; ++j)
    for (int i = 0; i < nnx; ++i) {
      const std::size_t g = static_cast<std::size_t>(j) * nnx + i;
      if (node_used[g]) {
        m.grid_to_node[g] = static_cast<int>(m.node_x.size());
        m.node_x.push_back(i * m.hx);
        m.node_y.push_back(j * m.hy);
      }
    }

  m.elem_nodes.resize(m.elem_ix.size());
  for (std::size_t e = 0; e < m.elem_ix.size(); ++e) {
    const int i = m.elem_ix[e], j = m.elem_iy[e];
    m.elem_nodes[e] = {m.node_at(i, j), m.node_at(i + 1, j), m.node_at(i + 1, j + 1),
                       m.node_at(i, j + 1)};
  }

  m.node_is_busbar.assign(m.node_x.size(), 0);
  m.free_nodes.resize(m.node_x.size());
  for (int n = 0; n < m.n_nodes(); ++n) m.free_nodes[n] = n;
  return m;
}

namespace detail {

// Edge geometry: number of elements along the edge and the grid node at a
// given along-edge node index.
inline int edge_elem_count(const Mesh& m, Edge e) {
  return (e == Edge::Left || e == Edge::Right) ? m.ny : m.nx;
}

inline double edge_elem_size(const Mesh& m, Edge e) {
  return (e == Edge::Left || e == Edge::Right) ? m.hy : m.hx;
}

inline int edge_grid_node(const Mesh& m, Edge e, int k) {
  switch (e) {
    case Edge::Left: return m.node_at(0, k);
    case Edge::Right: return m.node_at(m.nx, k);
    case Edge::Bottom: return m.node_at(k, 0);
    case Edge::Top: return m.node_at(k, m.ny);
  }
  return -1;
}

}  // namespace detail

// Resolves busbar segments to Dirichlet nodes. Segments snap to the nearest
// whole element (minimum one element). Replaces any previous busbar set.
inline Mesh resolve_busbar(Mesh mesh, const BusbarSpec& bus) {
  if (bus.segments.empty()) throw ConfigError("busbar: at least one segment required");
  std::vector<std::uint8_t> mark(mesh.node_x.size(), 0);

  for (const auto& seg : bus.segments) {
    const int ne = detail::edge_elem_count(mesh, seg.edge);
    const double h = detail::edge_elem_size(mesh, seg.edge);
    const double edge_len = ne * h;
    const double tol = 1e-9 * edge_len;
    if (seg.length <= 0.0) throw ConfigError("busbar: segment length must be positive");
    if (seg.start < -tol || seg.start + seg.length > edge_len + tol)
      throw ConfigError("busbar: segment exceeds edge extent");

    int n_seg = std::max(1, static_cast<int>(std::lround(seg.length / h)));
    n_seg = std::min(n_seg, ne);
    int e0 = static_cast<int>(std::lround(seg.start / h));
    e0 = std::max(0, std::min(e0, ne - n_seg));

    for (int k = e0; k <= e0 + n_seg; ++k) {
      const int node = detail::edge_grid_node(mesh, seg.edge, k);
      if (node >= 0) mark[node] = 1;
    }
  }

  mesh.busbar_nodes.clear();
  mesh.free_nodes.clear();
  mesh.node_is_busbar.assign(mesh.node_x.size(), 0);
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    if (mark[n]) {
      mesh.node_is_busbar[n] = 1;
      mesh.busbar_nodes.push_back(n);
    } else {
      mesh.free_nodes.push_back(n);
    }
  }
  if (mesh.busbar_nodes.empty())
    throw ConfigError("busbar: resolved node set is empty (segments on inactive boundary?)");
  return mesh;
}

// Cone neighborhoods between active element centers, distances in element
// units. Weight = radius - distance for distance < radius.
struct NeighborTable {
  std::vector<int> offsets;      // size n_elems+1
  std::vector<int> neighbor;     // active element indices
  std::vector<double> weight;    // cone weights, unnormalized
};

inline NeighborTable filter_neighborhoods(const Mesh& mesh, double radius_elements) {
  if (radius_elements < 0.0) throw ConfigError("filter: radius must be >= 0");
  NeighborTable t;
  const int ne = mesh.n_elems();
  t.offsets.assign(ne + 1, 0);
  const int reach = static_cast<int>(std::ceil(radius_elements));
  for (int e = 0; e < ne; ++e) {
    const int ei = mesh.elem_ix[e], ej = mesh.elem_iy[e];
    for (int dj = -reach; dj <= reach; ++dj) {
      const int fj = ej + dj;
      if (fj < 0 || fj >= mesh.ny) continue;
      for (int di = -reach; di <= reach; ++di) {
        const int fi = ei + di;
        if (fi < 0 || fi >= mesh.nx) continue;
        const int f = mesh.elem_grid_to_active[static_cast<std::size_t>(fj) * mesh.nx + fi];
        if (f < 0) continue;
        const double dist = std::sqrt(double(di) * di + double(dj) * dj);
        if (dist < radius_elements) {
          t.neighbor.push_back(f);
          t.weight.push_back(radius_elements - dist);
          ++t.offsets[e + 1];
        }
      }
    }
  }
  for (int e = 0; e < ne; ++e) t.offsets[e + 1] += t.offsets[e];
  return t;
}

}  // namespace soltop
