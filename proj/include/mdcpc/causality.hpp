#pragma once

// Perturbation and gradient probes for the masking guarantees: a context
// vector must never be a function of the latents it is asked to predict.

#include <cstdint>
#include <string>
#include <vector>

#include "mdcpc/autoregressor.hpp"
#include "mdcpc/model.hpp"

namespace mdcpc {

inline constexpr Real kCausalityTolerance = 1e-12;

struct CausalityReport {
  std::string name;
  bool passed = true;
  Real max_delta = 0;     // largest |change| in a value that must not change
  Real max_gradient = 0;  // largest |d value / d hidden input| seen by backprop
  int trials = 0;
  int violations = 0;
  std::string detail;
};

// context(i,j) must not change when latent(i,j) changes, for every (i,j).
CausalityReport check_self_position_independence(const Autoregressor& ar, int grid, int trials,
                                                 std::uint64_t seed, Real tolerance = kCausalityTolerance);

// Perturbing latent p leaves context unchanged at p and at every position
// before p in raster order (rows above, and earlier columns in p's row).
CausalityReport check_raster_causality(const Autoregressor& ar, int grid, int trials, std::uint64_t seed,
                                       Real tolerance = kCausalityTolerance);

// Perturbing any latent in row r leaves context rows < r unchanged.
CausalityReport check_row_causality(const Autoregressor& ar, int grid, int trials, std::uint64_t seed,
                                    Real tolerance = kCausalityTolerance);

// Replacing the true latents at every target position with noise before
// masking leaves every prediction unchanged.
CausalityReport check_target_leakage(const CpcModel& model, int trials, std::uint64_t seed,
                                     Real tolerance = kCausalityTolerance);

// Suites appropriate to the model's mode: self-position independence for
// multi, raster and row causality for single, target leakage for both.
std::vector<CausalityReport> run_leakcheck(const CpcModel& model, int trials, std::uint64_t seed);

}  // namespace mdcpc
