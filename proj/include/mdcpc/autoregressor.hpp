#pragma once

// Causal context networks over a latent grid: PixelCNN-style masked
// convolutions, the four-way rotated multi-directional block, and the block
// stack that turns masked latents into a context grid.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdcpc/autograd.hpp"
#include "mdcpc/grid.hpp"
#include "mdcpc/params.hpp"

namespace mdcpc {

// A hides the centre tap and everything after it in raster order; B hides
// only the taps strictly after the centre.
enum class MaskType { A, B };
enum class Directional { single, multi };

std::string to_string(MaskType m);
std::string to_string(Directional d);
Directional parse_directional(const std::string& s);

struct MaskedConvSpec {
  int kernel = 3;
  MaskType mask = MaskType::A;
  int in_channels = 0;
  int out_channels = 0;

  void validate() const;  // throws ConfigError on even or non-positive sizes
};

// kernel*kernel flags, row-major, 1 where the tap is visible.
std::vector<std::uint8_t> causal_tap_mask(int kernel, MaskType mask);

struct MaskedConvParams {
  ag::Var weight;  // [k,k,in,out]
  ag::Var bias;    // [out]
};

MaskedConvParams init_masked_conv(const MaskedConvSpec& spec, Rng& rng, ParamSet& params,
                                  const std::string& name);

// Zero-padded masked convolution, stride 1, same spatial size.
ag::Var masked_conv(const ag::Var& input, const MaskedConvSpec& spec, const MaskedConvParams& params);

// masked conv -> ELU, plus the input when `residual` (requires equal widths).
struct MaskedBlockParams {
  MaskedConvSpec spec;
  MaskedConvParams conv;
  bool residual = false;
};

ag::Var masked_block(const ag::Var& input, const MaskedBlockParams& params);

struct MultiDirectionalBlockParams {
  // Branch b works on the input rotated by b quarter turns clockwise.
  std::array<MaskedBlockParams, 4> branches;
  MaskedConvParams reduction;  // 1x1, 4*C -> C

  void validate() const;
};

// One block applied to a single grid: rotate by 0/90/180/270 degrees, run the
// branch masked block, rotate each result back into the input frame,
// concatenate channel-wise and reduce with the 1x1 convolution.
ag::Var multi_directional_block(const ag::Var& input, const MultiDirectionalBlockParams& params);

// Stacked form. Each direction keeps its own stream so that every stream stays
// causal in its own rotated raster order; `reduced` is the block's 1x1 mix of
// the four aligned streams. Feeding `reduced` into the next block instead
// would let a position see itself through a neighbour after two blocks.
struct DirectionalStreams {
  std::array<ag::Var, 4> streams;
  ag::Var reduced;
};
DirectionalStreams multi_directional_block(const std::array<ag::Var, 4>& streams,
                                           const MultiDirectionalBlockParams& params);

inline constexpr int kDefaultStackDepth = 6;

// single: first block A, the rest B. multi: A everywhere.
std::vector<MaskType> default_mask_pattern(Directional directional, int depth);

struct AutoregressorStack {
  Directional directional = Directional::multi;
  std::vector<MaskedBlockParams> single_blocks;
  std::vector<MultiDirectionalBlockParams> multi_blocks;

  int depth() const {
    return static_cast<int>(directional == Directional::single ? single_blocks.size()
                                                               : multi_blocks.size());
  }
};

// masked_latents [N,G,G,C] -> context [N,G,G,C]. Single mode returns the last
// block's output; multi mode returns the sum of every block's reduction.
// Throws ConfigError unless the stack has expected_depth blocks.
ag::Var autoregress(const ag::Var& masked_latents, const AutoregressorStack& stack,
                    int expected_depth = kDefaultStackDepth);

struct AutoregressorConfig {
  Directional directional = Directional::multi;
  int channels = 128;
  int kernel = 3;
  int depth = kDefaultStackDepth;
  // One masked convolution reused by all four rotated branches of a block.
  bool share_branch_weights = false;
  // Per-block mask types; empty selects default_mask_pattern.
  std::vector<MaskType> mask_pattern;

  void validate() const;
};

class Autoregressor {
 public:
  Autoregressor(AutoregressorConfig config, std::uint64_t seed,
                const std::string& prefix = "autoregressor.");
  Autoregressor(const Autoregressor&) = delete;
  Autoregressor& operator=(const Autoregressor&) = delete;
  Autoregressor(Autoregressor&&) = default;
  Autoregressor& operator=(Autoregressor&&) = default;

  const AutoregressorConfig& config() const { return config_; }
  const AutoregressorStack& stack() const { return stack_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  ag::Var forward(const ag::Var& masked_latents) const;
  ContextGrid context(const LatentGrid& masked_latents) const;

 private:
  AutoregressorConfig config_;
  ParamSet params_;
  AutoregressorStack stack_;
};

}  // namespace mdcpc
