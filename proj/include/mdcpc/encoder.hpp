#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdcpc/autograd.hpp"
#include "mdcpc/data.hpp"
#include "mdcpc/grid.hpp"
#include "mdcpc/params.hpp"
#include "mdcpc/patching.hpp"

namespace mdcpc {

enum class EncoderFamily { toy_cnn, resnext101 };
enum class Normalization { layer_norm, none };

std::string to_string(EncoderFamily f);
EncoderFamily parse_encoder_family(const std::string& s);
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct EncoderConfig {
  EncoderFamily family = EncoderFamily::toy_cnn;
  int latent_dim = 128;
  Normalization normalization = Normalization::layer_norm;
  // Side of the patches fed through the CPC path.
  int patch_size = 24;

  // toy_cnn: three 3x3 convolutions of width, width, 2*width channels.
  int toy_width = 32;

  // resnext101: 32x4d bottleneck blocks in four stages.
  int cardinality = 32;
  int bottleneck_width = 4;
  int stem_width = 64;
  std::array<int, 4> stage_blocks{3, 4, 23, 3};

  void validate() const;
};

// Patch / image encoder: a convolutional trunk, global average pooling and a
// linear projection to latent_dim (equivalent to a 1x1 convolution before
// pooling). Every op is per-sample, so patches never influence each other.
class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed, const std::string& prefix = "encoder.");
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  const EncoderConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  // images: [N,H,W,3] in [0,1] -> final trunk feature map [N,h,w,C].
  // Each normalization output is appended to norm_outputs when given.
  ag::Var features(const ag::Var& images, std::vector<ag::Var>* norm_outputs = nullptr) const;

  // images -> [N, latent_dim]
  ag::Var embed(const ag::Var& images) const;

  LatentGrid encode_patches(const PatchGrid& grid) const;
  std::vector<Real> encode_image(const ImageSample& image) const;

 private:
  struct ConvLayer {
    ag::Var weight, bias, gain, shift;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    std::string name;
  };

  ConvLayer make_conv(const std::string& name, int k, int cin, int cout, int stride, int padding,
                      int groups, Rng& rng);
  ag::Var apply_conv(const ConvLayer& layer, const ag::Var& x, bool activate,
                     std::vector<ag::Var>* norm_outputs) const;

  struct Bottleneck {
    ConvLayer reduce, grouped, expand;
    bool has_shortcut = false;
    ConvLayer shortcut;
  };

  EncoderConfig config_;
  ParamSet params_;
  std::vector<ConvLayer> plain_;        // toy_cnn layers, or the resnext stem
  std::vector<Bottleneck> bottlenecks_;  // resnext only
  ag::Var proj_weight_, proj_bias_;
};

}  // namespace mdcpc
