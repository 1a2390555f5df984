#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mdcpc/autoregressor.hpp"
#include "mdcpc/cpc.hpp"
#include "mdcpc/data.hpp"
#include "mdcpc/encoder.hpp"

namespace mdcpc {

using nlohmann::json;

struct CpcConfig {
  EncoderConfig encoder;
  AutoregressorConfig autoregressor;
  MaskKind mask_kind = MaskKind::infill;
  int context_rows = kDefaultContextRows;
  int image_size = kPcamImageSize;
  int stride = 12;
  int negatives = kDefaultNegatives;

  int grid() const;
  void validate() const;
};

// 96-pixel images cut into 24-pixel patches at stride 12, 128-d latents, six
// blocks, 16 negatives, in-fill mask with the multi-directional stack.
CpcConfig default_cpc_config();

json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const json& j);
json to_json(const CpcConfig& c);
CpcConfig cpc_config_from_json(const json& j);

// Encoder + autoregressor + prediction head trained jointly with InfoNCE.
class CpcModel {
 public:
  CpcModel(CpcConfig config, std::uint64_t seed);

  const CpcConfig& config() const { return config_; }
  const LatentMask& mask() const { return mask_; }
  const Encoder& encoder() const { return encoder_; }
  const Autoregressor& autoregressor() const { return autoregressor_; }
  const PredictionHead& head() const { return head_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  struct Forward {
    ag::Var latents;      // [B,G,G,D], unmasked
    ag::Var context;      // [B,G,G,D]
    ag::Var predictions;  // [B*T, D]
  };

  // Patch latents of a batch of images.
  ag::Var latents(const std::vector<const ImageSample*>& images) const;
  // Masks latents, runs the autoregressor and prediction head.
  Forward forward_from_latents(const ag::Var& latents) const;
  Forward forward(const std::vector<const ImageSample*>& images) const;

  // Negative image indices for every prediction row, drawn from rng.
  std::vector<std::vector<int>> draw_negatives(int batch_size, Rng& rng) const;
  ag::Var loss(const Forward& fwd, const std::vector<std::vector<int>>& negatives) const;
  ag::Var loss(const std::vector<const ImageSample*>& images, Rng& rng) const;

 private:
  CpcConfig config_;
  LatentMask mask_;
  Encoder encoder_;
  Autoregressor autoregressor_;
  PredictionHead head_;
  ParamSet params_;
};

struct ClassifierConfig {
  EncoderConfig encoder;
  int hidden = 256;
  int classes = 2;
};

json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const json& j);

// Encoder trunk -> pooled, projected features -> hidden ELU layer -> logits.
class Classifier {
 public:
  Classifier(ClassifierConfig config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  const Encoder& encoder() const { return encoder_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  // Copies every encoder.* tensor from a pretrained parameter set.
  void load_encoder(const ParamSet& pretrained);

  ag::Var logits(const ag::Var& images) const;
  std::vector<int> predict(const std::vector<const ImageSample*>& images) const;

 private:
  ClassifierConfig config_;
  Encoder encoder_;
  ParamSet params_;
  ag::Var hidden_w_, hidden_b_, out_w_, out_b_;
};

}  // namespace mdcpc
