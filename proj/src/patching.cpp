#include "mdcpc/patching.hpp"

#include <algorithm>
#include <cmath>

#include "mdcpc/error.hpp"

namespace mdcpc {

int grid_shape(int image_size, int patch_size, int stride) {
  if (stride < 1) throw GeometryError("stride must be >= 1");
  if (patch_size < 1 || patch_size > image_size) {
    throw GeometryError("patch size " + std::to_string(patch_size) + " does not fit image size " +
                        std::to_string(image_size));
  }
  const int span = image_size - patch_size;
  if (span % stride != 0) {
    throw GeometryError("image size " + std::to_string(image_size) + " minus patch size " +
                        std::to_string(patch_size) + " is not divisible by stride " +
                        std::to_string(stride));
  }
  return span / stride + 1;
}

PatchGrid extract_patches(const ImageSample& image, int patch_size, int stride) {
  PatchGrid g;
  g.grid = grid_shape(image.size, patch_size, stride);
  g.patch_size = patch_size;
  g.stride = stride;
  g.source_size = image.size;
  g.pixels.resize(static_cast<std::size_t>(g.grid) * g.grid * g.patch_elems());
  const std::size_t row_bytes = static_cast<std::size_t>(patch_size) * 3;
  auto* dst = g.pixels.data();
  for (int r = 0; r < g.grid; ++r) {
    for (int c = 0; c < g.grid; ++c) {
      for (int y = 0; y < patch_size; ++y) {
        const auto* src = &image.pixels[(static_cast<std::size_t>(r * stride + y) * image.size +
                                         static_cast<std::size_t>(c) * stride) * 3];
        dst = std::copy(src, src + row_bytes, dst);
      }
    }
  }
  return g;
}

ImageSample reassemble(const PatchGrid& grid) {
  const int n = grid.source_size;
  std::vector<double> acc(static_cast<std::size_t>(n) * n * 3, 0.0);
  std::vector<int> hits(static_cast<std::size_t>(n) * n, 0);
  for (int r = 0; r < grid.grid; ++r) {
    for (int c = 0; c < grid.grid; ++c) {
      for (int y = 0; y < grid.patch_size; ++y) {
        for (int x = 0; x < grid.patch_size; ++x) {
          const std::size_t p = static_cast<std::size_t>(r * grid.stride + y) * n + c * grid.stride + x;
          ++hits[p];
          for (int ch = 0; ch < 3; ++ch) acc[p * 3 + ch] += grid.at(r, c, y, x, ch);
        }
      }
    }
  }
  ImageSample out;
  out.size = n;
  out.pixels.resize(acc.size());
  for (std::size_t p = 0; p < hits.size(); ++p) {
    for (int ch = 0; ch < 3; ++ch) {
      out.pixels[p * 3 + ch] =
          hits[p] ? static_cast<std::uint8_t>(std::lround(acc[p * 3 + ch] / hits[p])) : 0;
    }
  }
  return out;
}

Tensor patches_to_tensor(const std::vector<PatchGrid>& grids) {
  if (grids.empty()) throw InvalidArgument("patches_to_tensor: no grids");
  const auto& first = grids.front();
  int count = 0;
  for (const auto& g : grids) {
    if (g.grid != first.grid || g.patch_size != first.patch_size) {
      throw GeometryError("patches_to_tensor: mixed grid geometry");
    }
    count += g.grid * g.grid;
  }
  Tensor out({count, first.patch_size, first.patch_size, 3});
  std::size_t off = 0;
  for (const auto& g : grids) {
    for (auto v : g.pixels) out[off++] = static_cast<Real>(v) / 255.0;
  }
  return out;
}

}  // namespace mdcpc
