#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mdcpc/autograd.hpp"
#include "mdcpc/grid.hpp"
#include "mdcpc/params.hpp"

namespace mdcpc {

using GridPos = std::pair<int, int>;  // (row, col)

enum class MaskKind { top_down, infill };
std::string to_string(MaskKind k);
MaskKind parse_mask_kind(const std::string& s);

// Context/target partition of a G x G latent grid. Flags are row-major.
struct LatentMask {
  MaskKind kind = MaskKind::infill;
  int grid = 0;
  std::vector<std::uint8_t> context;
  std::vector<std::uint8_t> targets;
  int context_rows = 0;  // top_down only

  bool is_context(int row, int col) const { return context[static_cast<std::size_t>(row * grid + col)] != 0; }
  bool is_target(int row, int col) const { return targets[static_cast<std::size_t>(row * grid + col)] != 0; }
  int context_count() const;
  int target_count() const;
  // Target positions in row-major order; predictions follow this order.
  std::vector<GridPos> target_positions() const;
};

// Rows [0, context_rows) are context, the rest are targets.
LatentMask make_topdown_mask(int grid, int context_rows);
// Outer ring is context, the (G-2)^2 interior are targets.
LatentMask make_infill_mask(int grid);

inline constexpr int kDefaultContextRows = 3;
inline constexpr int kDefaultNegatives = 16;

// Target positions receive the zero vector; context positions pass through.
LatentGrid apply_mask(const LatentGrid& latents, const LatentMask& mask);
ag::Var apply_mask(const ag::Var& latents, const LatentMask& mask);

// Linear maps from a context vector to predicted latents. top_down holds one
// D x D map per row offset k = 1..G-context_rows, applied to the deepest
// context row; infill holds one shared map applied at the target itself.
class PredictionHead {
 public:
  PredictionHead(MaskKind kind, int grid, int context_rows, int dim, std::uint64_t seed,
                 const std::string& prefix = "head.");
  // Explicit maps, each [D, D] with prediction = context . map.
  PredictionHead(MaskKind kind, int context_rows, std::vector<Tensor> maps, const std::string& prefix = "head.");

  MaskKind kind() const { return kind_; }
  int context_rows() const { return context_rows_; }
  int dim() const { return dim_; }
  int map_count() const { return static_cast<int>(maps_.size()); }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  // context [N,G,G,D] -> [N*T, D], row n*T + t predicts target t of
  // mask.target_positions().
  ag::Var predict(const ag::Var& context, const LatentMask& mask) const;

 private:
  MaskKind kind_;
  int context_rows_ = 0;
  int dim_ = 0;
  ParamSet params_;
  std::vector<ag::Var> maps_;
};

// One predicted latent per target position, in target_positions() order.
std::vector<std::vector<Real>> predict_targets(const ContextGrid& context, const LatentMask& mask,
                                               const PredictionHead& head);

// n image indices drawn uniformly with replacement from [0, batch_size)
// excluding positive_index.
std::vector<int> sample_negative_indices(int batch_size, int positive_index, int n, Rng& rng);

// Latent vectors at `position` from batch images other than positive_index.
std::vector<std::vector<Real>> sample_negatives(const std::vector<LatentGrid>& batch, int positive_index,
                                                GridPos position, int n, std::uint64_t seed);

// Mean over targets of -log softmax(score)[positive] where the candidates are
// the positive followed by that target's negatives and score = <prediction,
// candidate>.
Real info_nce_loss(const std::vector<std::vector<Real>>& predictions,
                   const std::vector<std::vector<Real>>& positives,
                   const std::vector<std::vector<std::vector<Real>>>& negatives);

// Graph form. predictions: [N*T, D]; latents: [N,G,G,D] (unmasked, supplying
// positives and negatives); negative_images[n*T + t] lists the batch images
// whose latent at targets[t] serves as a negative for that row.
ag::Var info_nce(const ag::Var& predictions, const ag::Var& latents, const std::vector<GridPos>& targets,
                 const std::vector<std::vector<int>>& negative_images);

}  // namespace mdcpc
