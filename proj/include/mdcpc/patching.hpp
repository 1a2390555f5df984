#pragma once

#include <cstdint>
#include <vector>

#include "mdcpc/data.hpp"

namespace mdcpc {

// G x G grid of overlapping square crops. Patch (row, col) has its top-left
// corner at pixel (row * stride, col * stride).
struct PatchGrid {
  int grid = 0;
  int patch_size = 0;
  int stride = 0;
  int source_size = 0;
  // grid*grid patches in row-major order, each patch_size*patch_size*3.
  std::vector<std::uint8_t> pixels;

  std::size_t patch_elems() const { return static_cast<std::size_t>(patch_size) * patch_size * 3; }
  const std::uint8_t* patch(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * grid + col) * patch_elems();
  }
  std::uint8_t at(int row, int col, int y, int x, int c) const {
    return patch(row, col)[(static_cast<std::size_t>(y) * patch_size + x) * 3 + c];
  }
};

// (image_size - patch_size) / stride + 1; throws GeometryError when the
// division is inexact.
int grid_shape(int image_size, int patch_size, int stride);

PatchGrid extract_patches(const ImageSample& image, int patch_size, int stride);

// Averages overlapping crops back into an image.
ImageSample reassemble(const PatchGrid& grid);

// Patches of several images as one [B*G*G, p, p, 3] tensor scaled to [0,1],
// image-major then row-major over the grid.
Tensor patches_to_tensor(const std::vector<PatchGrid>& grids);

}  // namespace mdcpc
