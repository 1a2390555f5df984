#include "mdcpc/model.hpp"

#include <algorithm>
#include <cmath>

#include "mdcpc/error.hpp"
#include "mdcpc/patching.hpp"

namespace mdcpc {

int CpcConfig::grid() const { return grid_shape(image_size, encoder.patch_size, stride); }

void CpcConfig::validate() const {
  encoder.validate();
  autoregressor.validate();
  if (autoregressor.channels != encoder.latent_dim) {
    throw ConfigError("autoregressor channels (" + std::to_string(autoregressor.channels) +
                      ") must equal latent_dim (" + std::to_string(encoder.latent_dim) + ")");
  }
  if (negatives < 1) throw ConfigError("need at least one negative");
  const int g = grid();
  if (mask_kind == MaskKind::infill && g < 3) throw ConfigError("in-fill mask needs a grid of at least 3");
  if (mask_kind == MaskKind::top_down && (context_rows < 1 || context_rows >= g)) {
    throw ConfigError("context_rows must lie in [1, G)");
  }
}

CpcConfig default_cpc_config() {
  CpcConfig c;
  c.encoder.latent_dim = 128;
  c.encoder.patch_size = 24;
  c.autoregressor.channels = 128;
  c.autoregressor.directional = Directional::multi;
  c.mask_kind = MaskKind::infill;
  c.image_size = 96;
  c.stride = 12;
  c.negatives = kDefaultNegatives;
  return c;
}

json to_json(const EncoderConfig& c) {
  return json{{"family", to_string(c.family)},
              {"latent_dim", c.latent_dim},
              {"normalization", to_string(c.normalization)},
              {"patch_size", c.patch_size},
              {"toy_width", c.toy_width},
              {"cardinality", c.cardinality},
              {"bottleneck_width", c.bottleneck_width},
              {"stem_width", c.stem_width},
              {"stage_blocks", c.stage_blocks}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.family = parse_encoder_family(j.at("family").get<std::string>());
  c.latent_dim = j.at("latent_dim").get<int>();
  c.normalization = parse_normalization(j.at("normalization").get<std::string>());
  c.patch_size = j.at("patch_size").get<int>();
  c.toy_width = j.at("toy_width").get<int>();
  c.cardinality = j.at("cardinality").get<int>();
  c.bottleneck_width = j.at("bottleneck_width").get<int>();
  c.stem_width = j.at("stem_width").get<int>();
  c.stage_blocks = j.at("stage_blocks").get<std::array<int, 4>>();
  return c;
}

json to_json(const CpcConfig& c) {
  std::vector<std::string> pattern;
  for (auto m : c.autoregressor.mask_pattern) pattern.push_back(to_string(m));
  return json{{"encoder", to_json(c.encoder)},
              {"autoregressor",
               {{"directional", to_string(c.autoregressor.directional)},
                {"channels", c.autoregressor.channels},
                {"kernel", c.autoregressor.kernel},
                {"depth", c.autoregressor.depth},
                {"share_branch_weights", c.autoregressor.share_branch_weights},
                {"mask_pattern", pattern}}},
              {"mask_kind", to_string(c.mask_kind)},
              {"context_rows", c.context_rows},
              {"image_size", c.image_size},
              {"stride", c.stride},
              {"negatives", c.negatives}};
}

CpcConfig cpc_config_from_json(const json& j) {
  CpcConfig c;
  c.encoder = encoder_config_from_json(j.at("encoder"));
  const auto& a = j.at("autoregressor");
  c.autoregressor.directional = parse_directional(a.at("directional").get<std::string>());
  c.autoregressor.channels = a.at("channels").get<int>();
  c.autoregressor.kernel = a.at("kernel").get<int>();
  c.autoregressor.depth = a.at("depth").get<int>();
  c.autoregressor.share_branch_weights = a.at("share_branch_weights").get<bool>();
  for (const auto& m : a.at("mask_pattern")) {
    const auto s = m.get<std::string>();
    if (s != "A" && s != "B") throw FormatError("mask pattern entries must be A or B");
    c.autoregressor.mask_pattern.push_back(s == "A" ? MaskType::A : MaskType::B);
  }
  c.mask_kind = parse_mask_kind(j.at("mask_kind").get<std::string>());
  c.context_rows = j.at("context_rows").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.stride = j.at("stride").get<int>();
  c.negatives = j.at("negatives").get<int>();
  return c;
}

namespace {

LatentMask mask_for(const CpcConfig& c) {
  c.validate();
  return c.mask_kind == MaskKind::infill ? make_infill_mask(c.grid()) : make_topdown_mask(c.grid(), c.context_rows);
}

}  // namespace

CpcModel::CpcModel(CpcConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      mask_(mask_for(config_)),
      encoder_(config_.encoder, derive_seed(seed, 1)),
      autoregressor_(config_.autoregressor, derive_seed(seed, 2)),
      head_(config_.mask_kind, config_.grid(), config_.context_rows, config_.encoder.latent_dim,
            derive_seed(seed, 3)) {
  params_.append(encoder_.params());
  params_.append(autoregressor_.params());
  params_.append(head_.params());
}

ag::Var CpcModel::latents(const std::vector<const ImageSample*>& images) const {
  std::vector<PatchGrid> grids;
  grids.reserve(images.size());
  for (const auto* img : images) {
    if (img->size != config_.image_size) {
      throw ConfigError("model expects " + std::to_string(config_.image_size) + "-pixel images, got " +
                        std::to_string(img->size));
    }
    grids.push_back(extract_patches(*img, config_.encoder.patch_size, config_.stride));
  }
  const int g = config_.grid();
  ag::Var z = encoder_.embed(ag::constant(patches_to_tensor(grids)));
  return ag::reshape(z, {static_cast<int>(images.size()), g, g, config_.encoder.latent_dim});
}

CpcModel::Forward CpcModel::forward_from_latents(const ag::Var& latents) const {
  Forward f;
  f.latents = latents;
  f.context = autoregressor_.forward(apply_mask(latents, mask_));
  f.predictions = head_.predict(f.context, mask_);
  return f;
}

CpcModel::Forward CpcModel::forward(const std::vector<const ImageSample*>& images) const {
  return forward_from_latents(latents(images));
}

std::vector<std::vector<int>> CpcModel::draw_negatives(int batch_size, Rng& rng) const {
  const int targets = mask_.target_count();
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batch_size) * targets);
  for (int b = 0; b < batch_size; ++b) {
    for (int t = 0; t < targets; ++t) {
      out[static_cast<std::size_t>(b) * targets + t] = sample_negative_indices(batch_size, b, config_.negatives, rng);
    }
  }
  return out;
}

ag::Var CpcModel::loss(const Forward& fwd, const std::vector<std::vector<int>>& negatives) const {
  return info_nce(fwd.predictions, fwd.latents, mask_.target_positions(), negatives);
}

ag::Var CpcModel::loss(const std::vector<const ImageSample*>& images, Rng& rng) const {
  auto fwd = forward(images);
  return loss(fwd, draw_negatives(static_cast<int>(images.size()), rng));
}

json to_json(const ClassifierConfig& c) {
  return json{{"encoder", to_json(c.encoder)}, {"hidden", c.hidden}, {"classes", c.classes}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.encoder = encoder_config_from_json(j.at("encoder"));
  c.hidden = j.at("hidden").get<int>();
  c.classes = j.at("classes").get<int>();
  return c;
}

Classifier::Classifier(ClassifierConfig config, std::uint64_t seed)
    : config_(std::move(config)), encoder_(config_.encoder, derive_seed(seed, 1)) {
  if (config_.hidden < 1 || config_.classes < 2) throw ConfigError("classifier needs hidden >= 1 and >= 2 classes");
  Rng rng(derive_seed(seed, 4));
  params_.append(encoder_.params());
  const int d = config_.encoder.latent_dim;
  hidden_w_ = params_.add("classifier.hidden.weight", init_fan_in({d, config_.hidden}, d, rng, std::sqrt(2.0)));
  hidden_b_ = params_.add("classifier.hidden.bias", Tensor({config_.hidden}));
  out_w_ = params_.add("classifier.output.weight", init_fan_in({config_.hidden, config_.classes}, config_.hidden, rng));
  out_b_ = params_.add("classifier.output.bias", Tensor({config_.classes}));
}

void Classifier::load_encoder(const ParamSet& pretrained) {
  const int copied = encoder_.params().copy_from(pretrained, "encoder.");
  if (copied != static_cast<int>(encoder_.params().names().size())) {
    throw ConfigError("pretrained parameters cover " + std::to_string(copied) + " of " +
                      std::to_string(encoder_.params().names().size()) + " encoder tensors");
  }
}

ag::Var Classifier::logits(const ag::Var& images) const {
  ag::Var f = encoder_.embed(images);
  ag::Var h = ag::elu(ag::linear(f, hidden_w_, hidden_b_));
  return ag::linear(h, out_w_, out_b_);
}

std::vector<int> Classifier::predict(const std::vector<const ImageSample*>& images) const {
  ag::Var l = logits(ag::constant(images_to_tensor(images)));
  const int n = l->value.dim(0), k = l->value.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Real* row = l->value.data() + static_cast<std::size_t>(i) * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace mdcpc
