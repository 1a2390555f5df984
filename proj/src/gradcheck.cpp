#include "mdcpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdcpc {

Real gradient_relative_error(Real analytic, Real numeric) {
  if (analytic == 0 && numeric == 0) return 0;
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), Real{1e-8}});
}

GradientCheckReport gradient_check(const ParamSet& params, const std::function<ag::Var()>& objective, Real step) {
  GradientCheckReport report;
  if (params.empty()) return report;

  params.zero_grad();
  ag::backward(objective());
  std::vector<Tensor> analytic;
  for (const auto& v : params.vars()) analytic.push_back(v->grad.empty() ? Tensor(v->value.shape()) : v->grad);

  for (std::size_t p = 0; p < params.vars().size(); ++p) {
    auto& value = params.vars()[p]->value;
    GradientGroupReport g;
    g.name = params.names()[p];
    g.count = value.size();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real saved = value[i];
      value[i] = saved + step;
      const Real up = objective()->value[0];
      value[i] = saved - step;
      const Real down = objective()->value[0];
      value[i] = saved;
      const Real numeric = (up - down) / (2 * step);
      const Real a = analytic[p][i];
      g.max_abs_error = std::max(g.max_abs_error, std::abs(a - numeric));
      g.max_relative_error = std::max(g.max_relative_error, gradient_relative_error(a, numeric));
    }
    report.max_relative_error = std::max(report.max_relative_error, g.max_relative_error);
    report.checked += g.count;
    report.groups.push_back(g);
  }
  return report;
}

CpcConfig gradcheck_cpc_config() {
  CpcConfig c;
  c.encoder.family = EncoderFamily::toy_cnn;
  c.encoder.latent_dim = 3;
  c.encoder.patch_size = 8;
  c.encoder.toy_width = 2;
  c.autoregressor.directional = Directional::multi;
  c.autoregressor.channels = 3;
  c.autoregressor.depth = 2;
  c.mask_kind = MaskKind::infill;
  c.image_size = 16;
  c.stride = 4;
  c.negatives = 2;
  return c;
}

GradientCheckReport gradient_check_cpc(const CpcConfig& config, std::uint64_t seed, Real step) {
  CpcModel model(config, seed);
  const DatasetStore data = generate_synthetic(5, config.image_size, derive_seed(seed, 9));
  std::vector<const ImageSample*> batch = {&data.train[0], &data.train[1], &data.train[2]};
  Rng rng(derive_seed(seed, 10));
  const auto negatives = model.draw_negatives(static_cast<int>(batch.size()), rng);
  // Latents are recomputed on every call, so perturbations reach every op.
  return gradient_check(
      model.params(), [&] { return model.loss(model.forward(batch), negatives); }, step);
}

}  // namespace mdcpc
