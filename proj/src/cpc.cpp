#include "mdcpc/cpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdcpc/error.hpp"

namespace mdcpc {

std::string to_string(MaskKind k) { return k == MaskKind::top_down ? "top_down" : "infill"; }

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "top_down") return MaskKind::top_down;
  if (s == "infill") return MaskKind::infill;
  throw ConfigError("unknown mask kind '" + s + "' (expected top_down or infill)");
}

int LatentMask::context_count() const { return static_cast<int>(std::count(context.begin(), context.end(), 1)); }
int LatentMask::target_count() const { return static_cast<int>(std::count(targets.begin(), targets.end(), 1)); }

std::vector<GridPos> LatentMask::target_positions() const {
  std::vector<GridPos> out;
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      if (is_target(r, c)) out.emplace_back(r, c);
    }
  }
  return out;
}

LatentMask make_topdown_mask(int grid, int context_rows) {
  if (grid < 2 || context_rows < 1 || context_rows >= grid) {
    throw InvalidArgument("top-down mask needs 1 <= context_rows < G (got context_rows=" +
                          std::to_string(context_rows) + ", G=" + std::to_string(grid) + ")");
  }
  LatentMask m;
  m.kind = MaskKind::top_down;
  m.grid = grid;
  m.context_rows = context_rows;
  m.context.assign(static_cast<std::size_t>(grid * grid), 0);
  m.targets.assign(static_cast<std::size_t>(grid * grid), 0);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      (r < context_rows ? m.context : m.targets)[static_cast<std::size_t>(r * grid + c)] = 1;
    }
  }
  return m;
}

LatentMask make_infill_mask(int grid) {
  if (grid < 3) throw InvalidArgument("in-fill mask needs G >= 3, got " + std::to_string(grid));
  LatentMask m;
  m.kind = MaskKind::infill;
  m.grid = grid;
  m.context.assign(static_cast<std::size_t>(grid * grid), 0);
  m.targets.assign(static_cast<std::size_t>(grid * grid), 0);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const bool ring = r == 0 || c == 0 || r == grid - 1 || c == grid - 1;
      (ring ? m.context : m.targets)[static_cast<std::size_t>(r * grid + c)] = 1;
    }
  }
  return m;
}

LatentGrid apply_mask(const LatentGrid& latents, const LatentMask& mask) {
  if (latents.grid != mask.grid) {
    throw GeometryError("mask for a " + std::to_string(mask.grid) + "-grid applied to a " +
                        std::to_string(latents.grid) + "-grid");
  }
  LatentGrid out = latents;
  for (int r = 0; r < mask.grid; ++r) {
    for (int c = 0; c < mask.grid; ++c) {
      if (mask.is_target(r, c)) std::fill(out.at(r, c), out.at(r, c) + out.dim, 0.0);
    }
  }
  return out;
}

ag::Var apply_mask(const ag::Var& latents, const LatentMask& mask) {
  const Tensor& v = latents->value;
  if (v.rank() != 4 || v.dim(1) != mask.grid || v.dim(2) != mask.grid) {
    throw GeometryError("mask for a " + std::to_string(mask.grid) + "-grid applied to " + v.shape_string());
  }
  std::vector<std::uint8_t> keep(mask.targets.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = mask.targets[i] ? 0 : 1;
  return ag::mask_positions(latents, keep);
}

PredictionHead::PredictionHead(MaskKind kind, int grid, int context_rows, int dim, std::uint64_t seed,
                               const std::string& prefix)
    : kind_(kind), context_rows_(kind == MaskKind::top_down ? context_rows : 0), dim_(dim) {
  if (dim < 1) throw ConfigError("prediction head dimension must be positive");
  int count = 1;
  if (kind == MaskKind::top_down) {
    if (context_rows < 1 || context_rows >= grid) throw ConfigError("top-down head needs 1 <= context_rows < G");
    count = grid - context_rows;
  }
  Rng rng(seed);
  // Small maps keep initial scores near zero, so the untrained loss sits at
  // the uniform-softmax value log(n + 1).
  const Real scale = 0.1 / std::sqrt(static_cast<Real>(dim));
  for (int k = 0; k < count; ++k) {
    const std::string name = prefix + (kind == MaskKind::top_down ? "offset" + std::to_string(k + 1) : "infill");
    maps_.push_back(params_.add(name, init_normal({dim, dim}, scale, rng)));
  }
}

PredictionHead::PredictionHead(MaskKind kind, int context_rows, std::vector<Tensor> maps, const std::string& prefix)
    : kind_(kind), context_rows_(kind == MaskKind::top_down ? context_rows : 0) {
  if (maps.empty()) throw ConfigError("prediction head needs at least one map");
  if (kind == MaskKind::infill && maps.size() != 1) throw ConfigError("in-fill head takes exactly one map");
  dim_ = maps.front().rank() == 2 ? maps.front().dim(0) : 0;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (maps[k].rank() != 2 || maps[k].dim(0) != dim_ || maps[k].dim(1) != dim_) {
      throw ConfigError("prediction maps must all be D x D");
    }
    const std::string name = prefix + (kind == MaskKind::top_down ? "offset" + std::to_string(k + 1) : "infill");
    maps_.push_back(params_.add(name, std::move(maps[k])));
  }
}

namespace {

// Row r of x is multiplied by maps[group[r % group.size()]].
ag::Var grouped_linear(const ag::Var& x, const std::vector<ag::Var>& maps, const std::vector<int>& group) {
  const Tensor& xv = x->value;
  const int rows = xv.dim(0), d = xv.dim(1);
  const int period = static_cast<int>(group.size());
  Tensor out({rows, d});
  for (int r = 0; r < rows; ++r) {
    const Tensor& w = maps[static_cast<std::size_t>(group[static_cast<std::size_t>(r % period)])]->value;
    const Real* xr = xv.data() + static_cast<std::size_t>(r) * d;
    Real* o = out.data() + static_cast<std::size_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      const Real* wr = w.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) o[j] += xr[i] * wr[j];
    }
  }
  std::vector<ag::Var> parents{x};
  parents.insert(parents.end(), maps.begin(), maps.end());
  return ag::make_node(std::move(out), std::move(parents), "grouped_linear", [group, rows, d, period](ag::Node& self) {
    ag::Node& xn = *self.parents[0];
    for (int r = 0; r < rows; ++r) {
      ag::Node& wn = *self.parents[1 + static_cast<std::size_t>(group[static_cast<std::size_t>(r % period)])];
      const Real* go = self.grad.data() + static_cast<std::size_t>(r) * d;
      const Real* xr = xn.value.data() + static_cast<std::size_t>(r) * d;
      for (int i = 0; i < d; ++i) {
        const Real* wr = wn.value.data() + static_cast<std::size_t>(i) * d;
        if (xn.requires_grad) {
          Real acc = 0;
          for (int j = 0; j < d; ++j) acc += go[j] * wr[j];
          xn.grad_buffer()[static_cast<std::size_t>(r) * d + i] += acc;
        }
        if (wn.requires_grad) {
          Real* gw = wn.grad_buffer().data() + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) gw[j] += xr[i] * go[j];
        }
      }
    }
  });
}

}  // namespace

ag::Var PredictionHead::predict(const ag::Var& context, const LatentMask& mask) const {
  if (mask.kind != kind_) {
    throw ConfigError("prediction head is " + to_string(kind_) + " but mask is " + to_string(mask.kind));
  }
  const Tensor& cv = context->value;
  if (cv.rank() != 4 || cv.dim(1) != mask.grid || cv.dim(3) != dim_) {
    throw GeometryError("context " + cv.shape_string() + " does not match head/mask geometry");
  }
  const auto targets = mask.target_positions();
  std::vector<GridPos> sources;
  std::vector<int> group;
  if (kind_ == MaskKind::infill) {
    sources = targets;
    group.assign(targets.size(), 0);
  } else {
    if (mask.context_rows != context_rows_) throw ConfigError("head and mask disagree on context_rows");
    const int deepest = context_rows_ - 1;
    for (const auto& [r, c] : targets) {
      const int offset = r - deepest;
      if (offset < 1 || offset > map_count()) throw ConfigError("top-down head has no map for offset " + std::to_string(offset));
      sources.emplace_back(deepest, c);
      group.push_back(offset - 1);
    }
  }
  return grouped_linear(ag::gather_positions(context, sources), maps_, group);
}

std::vector<std::vector<Real>> predict_targets(const ContextGrid& context, const LatentMask& mask,
                                               const PredictionHead& head) {
  ag::Var p = head.predict(ag::constant(context.to_tensor()), mask);
  const int rows = p->value.dim(0), d = p->value.dim(1);
  std::vector<std::vector<Real>> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const Real* src = p->value.data() + static_cast<std::size_t>(r) * d;
    out[static_cast<std::size_t>(r)].assign(src, src + d);
  }
  return out;
}

std::vector<int> sample_negative_indices(int batch_size, int positive_index, int n, Rng& rng) {
  if (batch_size < 2) throw InvalidArgument("negative sampling needs a batch of at least 2 images");
  if (n < 1) throw InvalidArgument("negative count must be at least 1");
  if (positive_index < 0 || positive_index >= batch_size) throw InvalidArgument("positive index outside batch");
  std::uniform_int_distribution<int> pick(0, batch_size - 2);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& idx : out) {
    const int k = pick(rng);
    idx = k >= positive_index ? k + 1 : k;
  }
  return out;
}

std::vector<std::vector<Real>> sample_negatives(const std::vector<LatentGrid>& batch, int positive_index,
                                                GridPos position, int n, std::uint64_t seed) {
  Rng rng(seed);
  const auto idx = sample_negative_indices(static_cast<int>(batch.size()), positive_index, n, rng);
  std::vector<std::vector<Real>> out;
  for (int i : idx) {
    const auto& g = batch[static_cast<std::size_t>(i)];
    if (position.first < 0 || position.first >= g.grid || position.second < 0 || position.second >= g.grid) {
      throw GeometryError("negative position outside grid");
    }
    const Real* v = g.at(position.first, position.second);
    out.emplace_back(v, v + g.dim);
  }
  return out;
}

namespace {

Real dot_product(const Real* a, const Real* b, int d) {
  Real s = 0;
  for (int i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

// -log softmax(scores)[0], computed with the max-shift log-sum-exp.
Real nce_term(const std::vector<Real>& scores) {
  const Real mx = *std::max_element(scores.begin(), scores.end());
  Real z = 0;
  for (Real s : scores) z += std::exp(s - mx);
  return mx + std::log(z) - scores[0];
}

}  // namespace

Real info_nce_loss(const std::vector<std::vector<Real>>& predictions,
                   const std::vector<std::vector<Real>>& positives,
                   const std::vector<std::vector<std::vector<Real>>>& negatives) {
  if (predictions.empty()) throw InvalidArgument("info_nce_loss: no targets");
  if (positives.size() != predictions.size() || negatives.size() != predictions.size()) {
    throw GeometryError("info_nce_loss: predictions, positives and negatives disagree in count");
  }
  Real total = 0;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const auto& p = predictions[t];
    const int d = static_cast<int>(p.size());
    if (positives[t].size() != p.size()) throw GeometryError("info_nce_loss: positive dimension mismatch");
    if (negatives[t].empty()) throw InvalidArgument("info_nce_loss: target without negatives");
    std::vector<Real> scores{dot_product(p.data(), positives[t].data(), d)};
    for (const auto& neg : negatives[t]) {
      if (neg.size() != p.size()) throw GeometryError("info_nce_loss: negative dimension mismatch");
      scores.push_back(dot_product(p.data(), neg.data(), d));
    }
    for (Real s : scores) {
      if (!std::isfinite(s)) throw NumericError("info_nce_loss: non-finite score");
    }
    total += nce_term(scores);
  }
  return total / static_cast<Real>(predictions.size());
}

ag::Var info_nce(const ag::Var& predictions, const ag::Var& latents, const std::vector<GridPos>& targets,
                 const std::vector<std::vector<int>>& negative_images) {
  const Tensor& pv = predictions->value;
  const Tensor& zv = latents->value;
  if (zv.rank() != 4 || pv.rank() != 2 || pv.dim(1) != zv.dim(3)) {
    throw GeometryError("info_nce: predictions " + pv.shape_string() + " vs latents " + zv.shape_string());
  }
  const int n = zv.dim(0), g = zv.dim(1), d = zv.dim(3);
  const int t_count = static_cast<int>(targets.size());
  const int rows = pv.dim(0);
  if (rows != n * t_count || negative_images.size() != static_cast<std::size_t>(rows)) {
    throw GeometryError("info_nce: expected " + std::to_string(n * t_count) + " prediction rows");
  }
  auto latent_offset = [&](int image, const GridPos& pos) {
    return ((static_cast<std::size_t>(image) * g + pos.first) * g + pos.second) * d;
  };

  // candidates[r] = latent offsets; index 0 is the positive.
  std::vector<std::vector<std::size_t>> candidates(static_cast<std::size_t>(rows));
  std::vector<std::vector<Real>> probs(static_cast<std::size_t>(rows));
  Real total = 0;
  for (int r = 0; r < rows; ++r) {
    const int image = r / t_count;
    const GridPos& pos = targets[static_cast<std::size_t>(r % t_count)];
    auto& cand = candidates[static_cast<std::size_t>(r)];
    cand.push_back(latent_offset(image, pos));
    const auto& negs = negative_images[static_cast<std::size_t>(r)];
    if (negs.empty()) throw InvalidArgument("info_nce: target without negatives");
    for (int j : negs) {
      if (j < 0 || j >= n) throw GeometryError("info_nce: negative image index outside batch");
      cand.push_back(latent_offset(j, pos));
    }
    const Real* pr = pv.data() + static_cast<std::size_t>(r) * d;
    std::vector<Real> scores;
    scores.reserve(cand.size());
    for (auto off : cand) scores.push_back(dot_product(pr, zv.data() + off, d));
    for (Real s : scores) {
      if (!std::isfinite(s)) throw NumericError("info_nce: non-finite score");
    }
    const Real term = nce_term(scores);
    total += term;
    // softmax = exp(s - lse), lse = term + s0
    const Real lse = term + scores[0];
    auto& pb = probs[static_cast<std::size_t>(r)];
    for (Real s : scores) pb.push_back(std::exp(s - lse));
  }
  return ag::make_node(
      Tensor({1}, {total / rows}), {predictions, latents}, "info_nce",
      [candidates = std::move(candidates), probs = std::move(probs), rows, d](ag::Node& self) {
        ag::Node& pn = *self.parents[0];
        ag::Node& zn = *self.parents[1];
        const Real scale = self.grad[0] / rows;
        for (int r = 0; r < rows; ++r) {
          const auto& cand = candidates[static_cast<std::size_t>(r)];
          const auto& pb = probs[static_cast<std::size_t>(r)];
          const Real* pr = pn.value.data() + static_cast<std::size_t>(r) * d;
          for (std::size_t j = 0; j < cand.size(); ++j) {
            const Real ds = scale * (pb[j] - (j == 0 ? 1.0 : 0.0));
            const Real* z = zn.value.data() + cand[j];
            if (pn.requires_grad) {
              Real* gp = pn.grad_buffer().data() + static_cast<std::size_t>(r) * d;
              for (int i = 0; i < d; ++i) gp[i] += ds * z[i];
            }
            if (zn.requires_grad) {
              Real* gz = zn.grad_buffer().data() + cand[j];
              for (int i = 0; i < d; ++i) gz[i] += ds * pr[i];
            }
          }
        }
      });
}

}  // namespace mdcpc
