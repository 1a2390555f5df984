#include "mdcpc/autoregressor.hpp"

#include <algorithm>
#include <cmath>

#include "mdcpc/error.hpp"

namespace mdcpc {

std::string to_string(MaskType m) { return m == MaskType::A ? "A" : "B"; }
std::string to_string(Directional d) { return d == Directional::single ? "single" : "multi"; }

Directional parse_directional(const std::string& s) {
  if (s == "single") return Directional::single;
  if (s == "multi") return Directional::multi;
  throw ConfigError("unknown directional mode '" + s + "' (expected single or multi)");
}

void MaskedConvSpec::validate() const {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("masked convolution needs an odd kernel size, got " + std::to_string(kernel));
  }
  if (in_channels < 1 || out_channels < 1) throw ConfigError("masked convolution channel counts must be positive");
}

std::vector<std::uint8_t> causal_tap_mask(int kernel, MaskType mask) {
  MaskedConvSpec{kernel, mask, 1, 1}.validate();
  const int centre = kernel / 2;
  std::vector<std::uint8_t> taps(static_cast<std::size_t>(kernel * kernel), 0);
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      const bool before = ky < centre || (ky == centre && kx < centre);
      const bool at_centre = ky == centre && kx == centre;
      taps[static_cast<std::size_t>(ky * kernel + kx)] = before || (at_centre && mask == MaskType::B);
    }
  }
  return taps;
}

MaskedConvParams init_masked_conv(const MaskedConvSpec& spec, Rng& rng, ParamSet& params,
                                  const std::string& name) {
  spec.validate();
  const auto taps = causal_tap_mask(spec.kernel, spec.mask);
  const int visible = static_cast<int>(std::count(taps.begin(), taps.end(), 1));
  MaskedConvParams p;
  p.weight = params.add(name + ".weight",
                        init_fan_in({spec.kernel, spec.kernel, spec.in_channels, spec.out_channels},
                                    std::max(visible, 1) * spec.in_channels, rng));
  p.bias = params.add(name + ".bias", Tensor({spec.out_channels}));
  return p;
}

ag::Var masked_conv(const ag::Var& input, const MaskedConvSpec& spec, const MaskedConvParams& params) {
  spec.validate();
  const Tensor& w = params.weight->value;
  if (w.rank() != 4 || w.dim(0) != spec.kernel || w.dim(1) != spec.kernel ||
      w.dim(2) != spec.in_channels || w.dim(3) != spec.out_channels) {
    throw ConfigError("masked convolution weight " + w.shape_string() + " does not match its spec");
  }
  if (input->value.rank() != 4 || input->value.dim(3) != spec.in_channels) {
    throw GeometryError("masked convolution input " + input->value.shape_string() +
                        " does not have " + std::to_string(spec.in_channels) + " channels");
  }
  const auto taps = causal_tap_mask(spec.kernel, spec.mask);
  return ag::conv2d(input, params.weight, params.bias, {.stride = 1, .padding = spec.kernel / 2}, &taps);
}

ag::Var masked_block(const ag::Var& input, const MaskedBlockParams& params) {
  ag::Var y = ag::elu(masked_conv(input, params.spec, params.conv));
  if (params.residual) {
    if (params.spec.in_channels != params.spec.out_channels) {
      throw ConfigError("residual masked block needs equal in/out channels");
    }
    y = ag::add(y, input);
  }
  return y;
}

void MultiDirectionalBlockParams::validate() const {
  const auto& s0 = branches[0].spec;
  for (const auto& b : branches) {
    b.spec.validate();
    if (b.spec.kernel != s0.kernel || b.spec.in_channels != s0.in_channels ||
        b.spec.out_channels != s0.out_channels) {
      throw ConfigError("multi-directional branches must share one masked convolution shape");
    }
  }
  const Tensor& r = reduction.weight->value;
  if (r.rank() != 4 || r.dim(0) != 1 || r.dim(1) != 1 || r.dim(2) != 4 * s0.out_channels) {
    throw ConfigError("reduction must be a 1x1 convolution over 4 x " +
                      std::to_string(s0.out_channels) + " channels, got " + r.shape_string());
  }
}

DirectionalStreams multi_directional_block(const std::array<ag::Var, 4>& streams,
                                           const MultiDirectionalBlockParams& params) {
  params.validate();
  DirectionalStreams out;
  for (int b = 0; b < 4; ++b) {
    const Tensor& v = streams[static_cast<std::size_t>(b)]->value;
    if (v.rank() != 4 || v.dim(1) != v.dim(2)) {
      throw GeometryError("multi-directional block needs a square grid, got " + v.shape_string());
    }
    ag::Var turned = ag::rotate(streams[static_cast<std::size_t>(b)], b);
    ag::Var branch = masked_block(turned, params.branches[static_cast<std::size_t>(b)]);
    out.streams[static_cast<std::size_t>(b)] = ag::rotate(branch, -b);
  }
  ag::Var cat = ag::concat_channels({out.streams.begin(), out.streams.end()});
  out.reduced = ag::conv2d(cat, params.reduction.weight, params.reduction.bias);
  return out;
}

ag::Var multi_directional_block(const ag::Var& input, const MultiDirectionalBlockParams& params) {
  return multi_directional_block(std::array<ag::Var, 4>{input, input, input, input}, params).reduced;
}

std::vector<MaskType> default_mask_pattern(Directional directional, int depth) {
  std::vector<MaskType> pattern(static_cast<std::size_t>(std::max(depth, 0)),
                                directional == Directional::single ? MaskType::B : MaskType::A);
  if (!pattern.empty()) pattern.front() = MaskType::A;
  return pattern;
}

ag::Var autoregress(const ag::Var& masked_latents, const AutoregressorStack& stack, int expected_depth) {
  if (stack.depth() != expected_depth) {
    throw ConfigError("autoregressor stack has " + std::to_string(stack.depth()) + " blocks, expected " +
                      std::to_string(expected_depth));
  }
  const Tensor& v = masked_latents->value;
  if (v.rank() != 4 || v.dim(1) != v.dim(2)) {
    throw GeometryError("autoregressor input must be [N,G,G,C], got " + v.shape_string());
  }
  if (stack.directional == Directional::single) {
    ag::Var x = masked_latents;
    for (const auto& blk : stack.single_blocks) x = masked_block(x, blk);
    return x;
  }
  std::array<ag::Var, 4> streams{masked_latents, masked_latents, masked_latents, masked_latents};
  ag::Var context;
  for (const auto& blk : stack.multi_blocks) {
    DirectionalStreams next = multi_directional_block(streams, blk);
    streams = next.streams;
    context = context ? ag::add(context, next.reduced) : next.reduced;
  }
  return context;
}

void AutoregressorConfig::validate() const {
  if (channels < 1) throw ConfigError("autoregressor channels must be positive");
  if (depth < 1) throw ConfigError("autoregressor depth must be positive");
  if (!mask_pattern.empty() && static_cast<int>(mask_pattern.size()) != depth) {
    throw ConfigError("mask pattern length does not match autoregressor depth");
  }
  MaskedConvSpec{kernel, MaskType::A, channels, channels}.validate();
}

Autoregressor::Autoregressor(AutoregressorConfig config, std::uint64_t seed, const std::string& prefix)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto pattern =
      config_.mask_pattern.empty() ? default_mask_pattern(config_.directional, config_.depth) : config_.mask_pattern;
  const int c = config_.channels;
  stack_.directional = config_.directional;
  for (int i = 0; i < config_.depth; ++i) {
    const std::string name = prefix + "block" + std::to_string(i);
    const MaskedConvSpec spec{config_.kernel, pattern[static_cast<std::size_t>(i)], c, c};
    // The first block reads raw latents, so a residual there would expose
    // each position to itself.
    const bool residual = i > 0;
    if (config_.directional == Directional::single) {
      stack_.single_blocks.push_back({spec, init_masked_conv(spec, rng, params_, name), residual});
      continue;
    }
    MultiDirectionalBlockParams blk;
    for (int b = 0; b < 4; ++b) {
      auto& branch = blk.branches[static_cast<std::size_t>(b)];
      branch.spec = spec;
      branch.residual = residual;
      if (config_.share_branch_weights && b > 0) {
        branch.conv = blk.branches[0].conv;
      } else {
        branch.conv = init_masked_conv(
            spec, rng, params_, name + (config_.share_branch_weights ? ".shared" : ".rot" + std::to_string(90 * b)));
      }
    }
    blk.reduction.weight = params_.add(name + ".reduce.weight", init_fan_in({1, 1, 4 * c, c}, 4 * c, rng));
    blk.reduction.bias = params_.add(name + ".reduce.bias", Tensor({c}));
    stack_.multi_blocks.push_back(std::move(blk));
  }
}

ag::Var Autoregressor::forward(const ag::Var& masked_latents) const {
  if (masked_latents->value.rank() == 4 && masked_latents->value.dim(3) != config_.channels) {
    throw GeometryError("autoregressor expects " + std::to_string(config_.channels) + " channels, got " +
                        masked_latents->value.shape_string());
  }
  ag::Var out = autoregress(masked_latents, stack_, config_.depth);
  if (!out->value.all_finite()) throw NumericError("non-finite context from autoregressor");
  return out;
}

ContextGrid Autoregressor::context(const LatentGrid& masked_latents) const {
  return ContextGrid(FeatureGrid::from_tensor(forward(ag::constant(masked_latents.to_tensor()))->value));
}

}  // namespace mdcpc
