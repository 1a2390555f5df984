#pragma once

#include <vector>

#include "mdcpc/error.hpp"
#include "mdcpc/tensor.hpp"

namespace mdcpc {

// G x G x D array of feature vectors, row-major over (row, col).
struct FeatureGrid {
  int grid = 0;
  int dim = 0;
  std::vector<Real> values;

  FeatureGrid() = default;
  FeatureGrid(int g, int d) : grid(g), dim(d), values(static_cast<std::size_t>(g) * g * d, 0.0) {}

  Real* at(int row, int col) { return values.data() + (static_cast<std::size_t>(row) * grid + col) * dim; }
  const Real* at(int row, int col) const {
    return values.data() + (static_cast<std::size_t>(row) * grid + col) * dim;
  }

  // As a [1,G,G,D] tensor.
  Tensor to_tensor() const { return Tensor({1, grid, grid, dim}, values); }

  // Slice `index` out of an [N,G,G,D] tensor.
  static FeatureGrid from_tensor(const Tensor& t, int index = 0) {
    if (t.rank() != 4 || t.dim(1) != t.dim(2)) {
      throw GeometryError("expected an [N,G,G,D] tensor, got " + t.shape_string());
    }
    FeatureGrid g(t.dim(1), t.dim(3));
    const std::size_t n = g.values.size();
    const Real* src = t.data() + static_cast<std::size_t>(index) * n;
    g.values.assign(src, src + n);
    return g;
  }
};

// Patch embeddings z.
struct LatentGrid : FeatureGrid {
  using FeatureGrid::FeatureGrid;
  LatentGrid(FeatureGrid g) : FeatureGrid(std::move(g)) {}
};

// Autoregressor output c.
struct ContextGrid : FeatureGrid {
  using FeatureGrid::FeatureGrid;
  ContextGrid(FeatureGrid g) : FeatureGrid(std::move(g)) {}
};

// Stacks grids of equal shape into [N,G,G,D].
template <typename GridT>
Tensor stack_grids(const std::vector<GridT>& grids) {
  if (grids.empty()) throw InvalidArgument("stack_grids: empty input");
  const int g = grids.front().grid, d = grids.front().dim;
  Tensor out({static_cast<int>(grids.size()), g, g, d});
  std::size_t off = 0;
  for (const auto& gr : grids) {
    if (gr.grid != g || gr.dim != d) throw GeometryError("stack_grids: shape mismatch");
    for (Real v : gr.values) out[off++] = v;
  }
  return out;
}

}  // namespace mdcpc
