#include "mdcpc/encoder.hpp"

#include <cmath>

#include "mdcpc/error.hpp"

namespace mdcpc {

std::string to_string(EncoderFamily f) {
  return f == EncoderFamily::toy_cnn ? "toy_cnn" : "resnext101";
}

EncoderFamily parse_encoder_family(const std::string& s) {
  if (s == "toy_cnn") return EncoderFamily::toy_cnn;
  if (s == "resnext101") return EncoderFamily::resnext101;
  throw ConfigError("unknown encoder family '" + s + "'");
}

std::string to_string(Normalization n) { return n == Normalization::layer_norm ? "layer_norm" : "none"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "layer_norm") return Normalization::layer_norm;
  if (s == "none") return Normalization::none;
  throw ConfigError("unknown normalization '" + s + "'");
}

void EncoderConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (family == EncoderFamily::toy_cnn && toy_width < 1) throw ConfigError("toy_width must be >= 1");
  if (family == EncoderFamily::resnext101) {
    if (cardinality < 1 || bottleneck_width < 1 || stem_width < 1) {
      throw ConfigError("resnext widths must be positive");
    }
    for (int b : stage_blocks) {
      if (b < 1) throw ConfigError("every resnext stage needs at least one block");
    }
  }
}

Encoder::ConvLayer Encoder::make_conv(const std::string& name, int k, int cin, int cout, int stride,
                                      int padding, int groups, Rng& rng) {
  ConvLayer layer;
  layer.name = name;
  layer.stride = stride;
  layer.padding = padding;
  layer.groups = groups;
  const std::string p = name + ".";
  layer.weight = params_.add(p + "weight",
                             init_fan_in({k, k, cin / groups, cout}, k * k * cin / groups, rng, std::sqrt(2.0)));
  layer.bias = params_.add(p + "bias", Tensor({cout}));
  if (config_.normalization == Normalization::layer_norm) {
    layer.gain = params_.add(p + "norm.gain", Tensor({cout}, 1.0));
    layer.shift = params_.add(p + "norm.bias", Tensor({cout}));
  }
  return layer;
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed, const std::string& prefix)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::string& P = prefix;
  int channels = 0;
  if (config_.family == EncoderFamily::toy_cnn) {
    const int w = config_.toy_width;
    plain_.push_back(make_conv(P + "conv0", 3, 3, w, 1, 1, 1, rng));
    plain_.push_back(make_conv(P + "conv1", 3, w, w, 2, 1, 1, rng));
    plain_.push_back(make_conv(P + "conv2", 3, w, 2 * w, 2, 1, 1, rng));
    channels = 2 * w;
  } else {
    plain_.push_back(make_conv(P + "stem", 7, 3, config_.stem_width, 2, 3, 1, rng));
    int in = config_.stem_width;
    for (int stage = 0; stage < 4; ++stage) {
      const int planes = 64 << stage;
      const int width = planes * config_.bottleneck_width * config_.cardinality / 64;
      const int out = planes * 4;
      for (int b = 0; b < config_.stage_blocks[static_cast<std::size_t>(stage)]; ++b) {
        const int stride = (stage > 0 && b == 0) ? 2 : 1;
        const std::string name = P + "stage" + std::to_string(stage + 1) + ".block" + std::to_string(b);
        Bottleneck blk;
        blk.reduce = make_conv(name + ".reduce", 1, in, width, 1, 0, 1, rng);
        blk.grouped = make_conv(name + ".grouped", 3, width, width, stride, 1, config_.cardinality, rng);
        blk.expand = make_conv(name + ".expand", 1, width, out, 1, 0, 1, rng);
        if (stride != 1 || in != out) {
          blk.has_shortcut = true;
          blk.shortcut = make_conv(name + ".shortcut", 1, in, out, stride, 0, 1, rng);
        }
        bottlenecks_.push_back(std::move(blk));
        in = out;
      }
    }
    channels = in;
  }
  proj_weight_ = params_.add(P + "projection.weight",
                             init_fan_in({channels, config_.latent_dim}, channels, rng));
  proj_bias_ = params_.add(P + "projection.bias", Tensor({config_.latent_dim}));
}

namespace {

void check_finite(const ag::Var& v, const std::string& where) {
  if (!v->value.all_finite()) throw NumericError("non-finite activation after encoder layer " + where);
}

}  // namespace

ag::Var Encoder::apply_conv(const ConvLayer& layer, const ag::Var& x, bool activate,
                            std::vector<ag::Var>* norm_outputs) const {
  ag::Var y = ag::conv2d(x, layer.weight, layer.bias,
                         {.stride = layer.stride, .padding = layer.padding, .groups = layer.groups});
  if (layer.gain) {
    y = ag::layer_norm(y, layer.gain, layer.shift);
    if (norm_outputs) norm_outputs->push_back(y);
  }
  if (activate) y = ag::elu(y);
  check_finite(y, layer.name);
  return y;
}

ag::Var Encoder::features(const ag::Var& images, std::vector<ag::Var>* norm_outputs) const {
  if (images->value.rank() != 4 || images->value.dim(3) != 3) {
    throw ConfigError("encoder expects [N,H,W,3] input, got " + images->value.shape_string());
  }
  ag::Var x = images;
  if (config_.family == EncoderFamily::toy_cnn) {
    for (const auto& layer : plain_) x = apply_conv(layer, x, true, norm_outputs);
    return x;
  }
  x = apply_conv(plain_.front(), x, true, norm_outputs);
  x = ag::max_pool2d(x, 3, 2, 1);
  for (const auto& blk : bottlenecks_) {
    ag::Var h = apply_conv(blk.reduce, x, true, norm_outputs);
    h = apply_conv(blk.grouped, h, true, norm_outputs);
    h = apply_conv(blk.expand, h, false, norm_outputs);
    ag::Var skip = blk.has_shortcut ? apply_conv(blk.shortcut, x, false, norm_outputs) : x;
    x = ag::elu(ag::add(h, skip));
  }
  return x;
}

ag::Var Encoder::embed(const ag::Var& images) const {
  ag::Var pooled = ag::global_avg_pool(features(images));
  ag::Var z = ag::linear(pooled, proj_weight_, proj_bias_);
  check_finite(z, "projection");
  return z;
}

LatentGrid Encoder::encode_patches(const PatchGrid& grid) const {
  if (grid.patch_size != config_.patch_size) {
    throw ConfigError("encoder configured for " + std::to_string(config_.patch_size) +
                      "-pixel patches, got " + std::to_string(grid.patch_size));
  }
  ag::Var z = embed(ag::constant(patches_to_tensor({grid})));
  LatentGrid out(grid.grid, config_.latent_dim);
  out.values = z->value.storage();
  return out;
}

std::vector<Real> Encoder::encode_image(const ImageSample& image) const {
  if (image.size < config_.patch_size) {
    throw ConfigError("image of size " + std::to_string(image.size) + " smaller than encoder input " +
                      std::to_string(config_.patch_size));
  }
  ag::Var z = embed(ag::constant(images_to_tensor({&image})));
  return z->value.storage();
}

}  // namespace mdcpc
