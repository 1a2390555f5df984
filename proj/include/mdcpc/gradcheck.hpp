#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mdcpc/model.hpp"

namespace mdcpc {

struct GradientGroupReport {
  std::string name;
  std::size_t count = 0;
  Real max_relative_error = 0;
  Real max_abs_error = 0;
};

struct GradientCheckReport {
  std::vector<GradientGroupReport> groups;
  Real max_relative_error = 0;
  std::size_t checked = 0;
  bool passed(Real tolerance) const { return max_relative_error <= tolerance; }
};

inline constexpr Real kGradcheckStep = 1e-5;

// relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// and 0 when both are exactly zero.
Real gradient_relative_error(Real analytic, Real numeric);

// Compares backprop through `objective` (a scalar graph over params) against
// central differences for every scalar of every parameter, grouped by tensor.
GradientCheckReport gradient_check(const ParamSet& params, const std::function<ag::Var()>& objective,
                                   Real step = kGradcheckStep);

// Toy end-to-end CPC graph: 16-pixel images, 8-pixel patches at stride 4
// (3x3 grid, in-fill), 3-d latents, width-2 encoder, two multi-directional
// blocks. Under 1000 parameters.
CpcConfig gradcheck_cpc_config();

// Full InfoNCE objective on a fixed batch of three synthetic images with
// fixed negatives.
GradientCheckReport gradient_check_cpc(const CpcConfig& config, std::uint64_t seed, Real step = kGradcheckStep);

}  // namespace mdcpc
