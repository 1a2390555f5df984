#include <algorithm>
#include <chrono>

#include <gtest/gtest.h>

#include "mdcpc/encoder.hpp"
#include "mdcpc/error.hpp"
#include "mdcpc/gradcheck.hpp"
#include "mdcpc/patching.hpp"
#include "test_util.hpp"

using namespace mdcpc;

namespace {

EncoderConfig toy(int dim, int patch, int width) {
  EncoderConfig c;
  c.family = EncoderFamily::toy_cnn;
  c.latent_dim = dim;
  c.patch_size = patch;
  c.toy_width = width;
  return c;
}

ImageSample noise_image(int n, std::uint64_t seed) {
  Rng rng(seed);
  ImageSample s;
  s.size = n;
  s.pixels.resize(static_cast<std::size_t>(n) * n * 3);
  for (auto& p : s.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  return s;
}

}  // namespace

TEST(Encoder, LatentGridShape) {
  Encoder enc(toy(8, 8, 4), 1);
  const LatentGrid z = enc.encode_patches(extract_patches(noise_image(16, 2), 8, 4));
  EXPECT_EQ(z.grid, 3);
  EXPECT_EQ(z.dim, 8);
  EXPECT_EQ(z.values.size(), 72u);
}

TEST(Encoder, ZeroImageGivesZeroVectorWithZeroBiases) {
  Encoder enc(toy(8, 24, 4), 3);
  for (std::size_t i = 0; i < enc.params().names().size(); ++i) {
    const auto& name = enc.params().names()[i];
    if (name.ends_with(".bias")) enc.params().vars()[i]->value.fill(0.0);
  }
  ImageSample zero;
  zero.size = 24;
  zero.pixels.assign(24 * 24 * 3, 0);
  for (Real v : enc.encode_image(zero)) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, PatchesAreEncodedIndependently) {
  Encoder enc(toy(6, 8, 4), 4);
  const ImageSample img = noise_image(16, 5);
  ImageSample changed = img;
  // Pixels only inside patch (0,0)'s exclusive region (rows/cols < 4).
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) changed.at(y, x, 0) = static_cast<std::uint8_t>(255 - img.at(y, x, 0));
  const LatentGrid a = enc.encode_patches(extract_patches(img, 8, 4));
  const LatentGrid b = enc.encode_patches(extract_patches(changed, 8, 4));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const bool touched = r == 0 && c == 0;
      bool same = std::equal(a.at(r, c), a.at(r, c) + 6, b.at(r, c));
      EXPECT_EQ(same, !touched) << r << "," << c;
    }
}

TEST(Encoder, ToyForwardUnderFiveMilliseconds) {
  Encoder enc(toy(128, 24, 32), 6);
  const ag::Var x = ag::constant(tu::random_tensor({1, 24, 24, 3}, 7));
  enc.embed(x);
  std::vector<double> ms;
  for (int i = 0; i < 15; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    enc.embed(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(ms.begin(), ms.begin() + 7, ms.end());
  EXPECT_LT(ms[7], 5.0);
}

TEST(Encoder, SmallResNeXtRuns) {
  EncoderConfig c;
  c.family = EncoderFamily::resnext101;
  c.latent_dim = 8;
  c.patch_size = 32;
  c.cardinality = 2;
  c.bottleneck_width = 2;
  c.stem_width = 4;
  c.stage_blocks = {1, 1, 1, 1};
  Encoder enc(c, 8);
  const ag::Var z = enc.embed(ag::constant(tu::random_tensor({2, 32, 32, 3}, 9)));
  EXPECT_EQ(z->value.shape(), (std::vector<int>{2, 8}));
  EXPECT_TRUE(z->value.all_finite());
}

TEST(Encoder, FullResNeXtHasExpectedDepth) {
  EncoderConfig c;
  c.family = EncoderFamily::resnext101;
  c.latent_dim = 128;
  c.patch_size = 24;
  Encoder enc(c, 10);
  int convs = 0;
  for (const auto& n : enc.params().names()) {
    if (n.ends_with(".weight") && n.find("shortcut") == std::string::npos && n.find("projection") == std::string::npos) ++convs;
  }
  // stem + 3 convolutions per bottleneck block * (3+4+23+3) blocks.
  EXPECT_EQ(convs, 1 + 3 * 33);
}

TEST(Encoder, NormalizationOutputsAreStandardized) {
  Encoder enc(toy(8, 8, 4), 11);
  std::vector<ag::Var> norms;
  // Default gains/shifts are identity, so each normalized map has mean 0, var 1.
  enc.features(ag::constant(tu::random_tensor({2, 8, 8, 3}, 12)), &norms);
  ASSERT_FALSE(norms.empty());
  for (const auto& v : norms) {
    const std::size_t per = v->value.size() / 2;
    for (int n = 0; n < 2; ++n) {
      double m = 0, s = 0;
      for (std::size_t i = 0; i < per; ++i) m += v->value[n * per + i];
      m /= per;
      for (std::size_t i = 0; i < per; ++i) s += (v->value[n * per + i] - m) * (v->value[n * per + i] - m);
      EXPECT_NEAR(m, 0.0, 1e-9);
      EXPECT_NEAR(s / per, 1.0, 1e-3);
    }
  }
}

TEST(Encoder, GradientOfProbeMatchesFiniteDifferences) {
  Encoder enc(toy(3, 8, 2), 13);
  ASSERT_LE(enc.params().count(), 1000u);
  const PatchGrid g = extract_patches(noise_image(16, 14), 8, 4);
  const ag::Var x = ag::constant(patches_to_tensor({g}));
  const Tensor probe = tu::random_tensor({9, 3}, 15);
  const auto report = gradient_check(enc.params(), [&] { return ag::dot(enc.embed(x), probe); });
  EXPECT_LE(report.max_relative_error, 1e-4);
}

TEST(Encoder, Errors) {
  Encoder enc(toy(4, 8, 2), 16);
  EXPECT_THROW(enc.encode_patches(extract_patches(noise_image(24, 1), 12, 6)), ConfigError);
  EXPECT_THROW(Encoder(toy(0, 8, 2), 1), ConfigError);
  EXPECT_THROW(parse_encoder_family("vgg"), ConfigError);
  Tensor bad = tu::random_tensor({1, 8, 8, 3}, 17);
  bad[5] = std::numeric_limits<Real>::infinity();
  EXPECT_THROW(enc.embed(ag::constant(bad)), NumericError);
}
