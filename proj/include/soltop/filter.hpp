#pragma once

#include <vector>

#include "soltop/mesh.hpp"

namespace soltop {

// Row-normalized cone filter over active elements. Rows sum to one, so the
// filter preserves constants and [0,1] bounds.
struct FilterOperator {
  std::vector<int> offsets;
  std::vector<int> neighbor;
  std::vector<double> weight;  // normalized per row

  int size() const { return static_cast<int>(offsets.size()) - 1; }

  std::vector<double> apply(const std::vector<double>& x) const {
    std::vector<double> y(size(), 0.0);
    for (int e = 0; e < size(); ++e) {
      double s = 0.0;
      for (int k = offsets[e]; k < offsets[e + 1]; ++k) s += weight[k] * x[neighbor[k]];
      y[e] = s;
    }
    return y;
  }

  // Multiplication by the transpose; chains gradients from filtered back to
  // raw densities.
  std::vector<double> adjoint_apply(const std::vector<double>& g) const {
    std::vector<double> y(size(), 0.0);
    for (int e = 0; e < size(); ++e)
      for (int k = offsets[e]; k < offsets[e + 1]; ++k) y[neighbor[k]] += weight[k] * g[e];
    return y;
  }
};

inline FilterOperator build_filter(const Mesh& mesh, double radius_elements) {
  const NeighborTable t = filter_neighborhoods(mesh, radius_elements);
  FilterOperator f;
  f.offsets = t.offsets;
  f.neighbor = t.neighbor;
  f.weight.resize(t.weight.size());
  for (int e = 0; e < mesh.n_elems(); ++e) {
    double row_sum = 0.0;
    for (int k = t.offsets[e]; k < t.offsets[e + 1]; ++k) row_sum += t.weight[k];
    for (int k = t.offsets[e]; k < t.offsets[e + 1]; ++k) f.weight[k] = t.weight[k] / row_sum;
  }
  return f;
}

// Identity filter (radius below element spacing degenerates to self-only).
inline FilterOperator identity_filter(const Mesh& mesh) { return build_filter(mesh, 0.5); }

}  // namespace soltop
