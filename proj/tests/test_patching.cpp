#include <gtest/gtest.h>

#include "mdcpc/error.hpp"
#include "mdcpc/patching.hpp"

using namespace mdcpc;

namespace {

ImageSample gradient_image(int n) {
  ImageSample s;
  s.size = n;
  s.pixels.resize(static_cast<std::size_t>(n) * n * 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) s.at(y, x, c) = static_cast<std::uint8_t>((y * 7 + x * 3 + c * 11) % 256);
  return s;
}

}  // namespace

TEST(GridShape, DefaultPcamGeometry) { EXPECT_EQ(grid_shape(96, 24, 12), 7); }

TEST(GridShape, ToyGeometry) {
  EXPECT_EQ(grid_shape(32, 8, 4), 7);
  EXPECT_EQ(grid_shape(16, 8, 4), 3);
  EXPECT_EQ(grid_shape(8, 8, 4), 1);
}

TEST(GridShape, RejectsInexactOrInvalid) {
  EXPECT_THROW(grid_shape(96, 24, 10), GeometryError);
  EXPECT_THROW(grid_shape(96, 24, 0), GeometryError);
  EXPECT_THROW(grid_shape(20, 24, 12), GeometryError);
}

TEST(ExtractPatches, FortyNinePatchesWithTwelvePixelOverlap) {
  const ImageSample img = gradient_image(96);
  const PatchGrid g = extract_patches(img, 24, 12);
  EXPECT_EQ(g.grid, 7);
  EXPECT_EQ(g.pixels.size(), 49u * 24 * 24 * 3);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c)
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) ASSERT_EQ(g.at(r, c, y, x, 1), img.at(r * 12 + y, c * 12 + x, 1));
  // Horizontal neighbours share exactly 12 columns, vertical ones 12 rows.
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 12; ++x) {
      EXPECT_EQ(g.at(2, 3, y, x + 12, 0), g.at(2, 4, y, x, 0));
      EXPECT_EQ(g.at(3, 2, x + 12, y, 2), g.at(4, 2, x, y, 2));
    }
}

TEST(Reassemble, InvertsExtraction) {
  const ImageSample img = gradient_image(32);
  const ImageSample back = reassemble(extract_patches(img, 8, 4));
  EXPECT_EQ(back.size, 32);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(PatchTensor, LayoutIsImageMajorRowMajor) {
  const ImageSample a = gradient_image(16);
  ImageSample b = a;
  for (auto& p : b.pixels) p = 255 - p;
  const Tensor t = patches_to_tensor({extract_patches(a, 8, 4), extract_patches(b, 8, 4)});
  EXPECT_EQ(t.shape(), (std::vector<int>{18, 8, 8, 3}));
  // Patch (1,2) of the second image starts at pixel (4, 8).
  EXPECT_DOUBLE_EQ(t.at(9 + 1 * 3 + 2, 0, 0, 0), b.at(4, 8, 0) / 255.0);
}
