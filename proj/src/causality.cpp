#include "mdcpc/causality.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mdcpc {
namespace {

Tensor random_latents(int grid, int dim, Rng& rng) {
  return init_normal({1, grid, grid, dim}, 1.0, rng);
}

Real position_delta(const Tensor& a, const Tensor& b, int grid, int dim, int row, int col) {
  const std::size_t off = (static_cast<std::size_t>(row) * grid + col) * dim;
  Real worst = 0;
  for (int d = 0; d < dim; ++d) worst = std::max(worst, std::abs(a[off + d] - b[off + d]));
  return worst;
}

void perturb_position(Tensor& t, int grid, int dim, int row, int col, Rng& rng) {
  std::normal_distribution<Real> noise(0.0, 3.0);
  const std::size_t off = (static_cast<std::size_t>(row) * grid + col) * dim;
  for (int d = 0; d < dim; ++d) t[off + d] += noise(rng);
}

void finish(CausalityReport& r, Real tolerance) {
  r.passed = r.violations == 0 && r.max_delta <= tolerance && r.max_gradient <= tolerance;
  std::ostringstream os;
  os << r.name << ": " << (r.passed ? "PASS" : "FAIL") << " (trials=" << r.trials << ", max delta=" << r.max_delta
     << ", max gradient=" << r.max_gradient << ", violations=" << r.violations << ")";
  if (!r.detail.empty()) os << " " << r.detail;
  r.detail = os.str();
}

}  // namespace

CausalityReport check_self_position_independence(const Autoregressor& ar, int grid, int trials, std::uint64_t seed,
                                                 Real tolerance) {
  CausalityReport r;
  r.name = "self-position independence";
  r.trials = trials;
  const int dim = ar.config().channels;
  Rng rng(seed);
  std::string first_violation;
  for (int t = 0; t < trials; ++t) {
    const Tensor base = random_latents(grid, dim, rng);
    const Tensor base_ctx = ar.forward(ag::constant(base))->value;
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        Tensor pert = base;
        perturb_position(pert, grid, dim, i, j, rng);
        const Tensor ctx = ar.forward(ag::constant(pert))->value;
        const Real delta = position_delta(base_ctx, ctx, grid, dim, i, j);
        r.max_delta = std::max(r.max_delta, delta);
        if (delta > tolerance) {
          ++r.violations;
          if (first_violation.empty()) {
            first_violation = "self-position leakage: context(" + std::to_string(i) + "," + std::to_string(j) +
                              ") depends on latent(" + std::to_string(i) + "," + std::to_string(j) + ")";
          }
        }
      }
    }
    // Gradient route: d<probe, context(i,j)>/d latent(i,j) must vanish.
    const int i = std::uniform_int_distribution<int>(0, grid - 1)(rng);
    const int j = std::uniform_int_distribution<int>(0, grid - 1)(rng);
    ag::Var input = ag::parameter(base);
    ag::Var ctx = ar.forward(input);
    Tensor probe(ctx->value.shape());
    std::normal_distribution<Real> g(0.0, 1.0);
    for (int d = 0; d < dim; ++d) probe[(static_cast<std::size_t>(i) * grid + j) * dim + d] = g(rng);
    ag::backward(ag::dot(ctx, probe));
    r.max_gradient = std::max(r.max_gradient, position_delta(input->grad, Tensor(input->grad.shape()), grid, dim, i, j));
  }
  r.detail = first_violation;
  finish(r, tolerance);
  return r;
}

CausalityReport check_raster_causality(const Autoregressor& ar, int grid, int trials, std::uint64_t seed,
                                       Real tolerance) {
  CausalityReport r;
  r.name = "raster-order causality";
  r.trials = trials;
  const int dim = ar.config().channels;
  Rng rng(seed);
  std::string first_violation;
  for (int t = 0; t < trials; ++t) {
    const Tensor base = random_latents(grid, dim, rng);
    const Tensor base_ctx = ar.forward(ag::constant(base))->value;
    for (int p = 0; p < grid * grid; ++p) {
      const int pi = p / grid, pj = p % grid;
      Tensor pert = base;
      perturb_position(pert, grid, dim, pi, pj, rng);
      const Tensor ctx = ar.forward(ag::constant(pert))->value;
      for (int q = 0; q <= p; ++q) {
        const Real delta = position_delta(base_ctx, ctx, grid, dim, q / grid, q % grid);
        r.max_delta = std::max(r.max_delta, delta);
        if (delta > tolerance) {
          ++r.violations;
          if (first_violation.empty()) {
            first_violation = "context(" + std::to_string(q / grid) + "," + std::to_string(q % grid) +
                              ") depends on later latent(" + std::to_string(pi) + "," + std::to_string(pj) + ")";
          }
        }
      }
    }
    // Gradient route for one random position.
    const int p = std::uniform_int_distribution<int>(0, grid * grid - 1)(rng);
    ag::Var input = ag::parameter(base);
    ag::Var ctx = ar.forward(input);
    Tensor probe(ctx->value.shape());
    std::normal_distribution<Real> g(0.0, 1.0);
    for (int d = 0; d < dim; ++d) probe[static_cast<std::size_t>(p) * dim + d] = g(rng);
    ag::backward(ag::dot(ctx, probe));
    for (int q = p; q < grid * grid; ++q) {
      r.max_gradient = std::max(
          r.max_gradient, position_delta(input->grad, Tensor(input->grad.shape()), grid, dim, q / grid, q % grid));
    }
  }
  r.detail = first_violation;
  finish(r, tolerance);
  return r;
}

CausalityReport check_row_causality(const Autoregressor& ar, int grid, int trials, std::uint64_t seed,
                                    Real tolerance) {
  CausalityReport r;
  r.name = "row causality";
  r.trials = trials;
  const int dim = ar.config().channels;
  Rng rng(seed);
  std::string first_violation;
  for (int t = 0; t < trials; ++t) {
    const Tensor base = random_latents(grid, dim, rng);
    const Tensor base_ctx = ar.forward(ag::constant(base))->value;
    for (int row = 0; row < grid; ++row) {
      Tensor pert = base;
      const int col = std::uniform_int_distribution<int>(0, grid - 1)(rng);
      perturb_position(pert, grid, dim, row, col, rng);
      const Tensor ctx = ar.forward(ag::constant(pert))->value;
      for (int above = 0; above < row; ++above) {
        for (int c = 0; c < grid; ++c) {
          const Real delta = position_delta(base_ctx, ctx, grid, dim, above, c);
          r.max_delta = std::max(r.max_delta, delta);
          if (delta > tolerance) {
            ++r.violations;
            if (first_violation.empty()) {
              first_violation = "row " + std::to_string(above) + " depends on row " + std::to_string(row);
            }
          }
        }
      }
    }
  }
  r.detail = first_violation;
  finish(r, tolerance);
  return r;
}

CausalityReport check_target_leakage(const CpcModel& model, int trials, std::uint64_t seed, Real tolerance) {
  CausalityReport r;
  r.name = "target leakage (" + to_string(model.config().mask_kind) + ")";
  r.trials = trials;
  const int grid = model.config().grid();
  const int dim = model.config().encoder.latent_dim;
  const auto& mask = model.mask();
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const Tensor base = random_latents(grid, dim, rng);
    const Tensor base_pred = model.forward_from_latents(ag::constant(base)).predictions->value;
    Tensor noisy = base;
    for (const auto& [i, j] : mask.target_positions()) perturb_position(noisy, grid, dim, i, j, rng);
    const Tensor pred = model.forward_from_latents(ag::constant(noisy)).predictions->value;
    Real worst = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) worst = std::max(worst, std::abs(pred[k] - base_pred[k]));
    r.max_delta = std::max(r.max_delta, worst);
    if (worst > tolerance) ++r.violations;

    // Gradient route: predictions must carry no gradient into target latents.
    ag::Var input = ag::parameter(base);
    ag::Var preds = model.forward_from_latents(input).predictions;
    Tensor probe(preds->value.shape());
    std::normal_distribution<Real> g(0.0, 1.0);
    for (auto& v : probe.storage()) v = g(rng);
    ag::backward(ag::dot(preds, probe));
    if (input->grad.size() == input->value.size()) {
      for (const auto& [i, j] : mask.target_positions()) {
        r.max_gradient = std::max(r.max_gradient, position_delta(input->grad, Tensor(input->grad.shape()), grid, dim, i, j));
      }
    }
  }
  finish(r, tolerance);
  return r;
}

std::vector<CausalityReport> run_leakcheck(const CpcModel& model, int trials, std::uint64_t seed) {
  std::vector<CausalityReport> out;
  const int grid = model.config().grid();
  const auto& ar = model.autoregressor();
  if (ar.config().directional == Directional::multi) {
    out.push_back(check_self_position_independence(ar, grid, trials, derive_seed(seed, 1)));
  } else {
    out.push_back(check_raster_causality(ar, grid, trials, derive_seed(seed, 2)));
    out.push_back(check_row_causality(ar, grid, trials, derive_seed(seed, 3)));
  }
  out.push_back(check_target_leakage(model, trials, derive_seed(seed, 4)));
  return out;
}

}  // namespace mdcpc
