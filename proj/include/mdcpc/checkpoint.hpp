#pragma once

// Single-file checkpoint: an 8-byte format tag, a version, a length-prefixed
// JSON section (config, metrics, RNG state, parameter index) and the raw
// little-endian doubles of every parameter in index order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mdcpc/params.hpp"

namespace mdcpc {

inline constexpr char kCheckpointTag[8] = {'M', 'D', 'C', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;          // "cpc" or "classifier"
  nlohmann::json config;     // model config
  nlohmann::json metrics;    // metric history and summary values
  nlohmann::json extra;      // free-form run information
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> params;

  bool has_param(const std::string& name) const;
  const Tensor& param(const std::string& name) const;
};

Checkpoint make_checkpoint(const std::string& kind, nlohmann::json config, const ParamSet& params);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws IngestionError when unreadable, FormatError on a bad tag, version or
// truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every tensor of `params` from the checkpoint. Names and shapes must
// match exactly unless allow_missing, in which case absent names are skipped.
// Returns the number of tensors copied.
int restore_params(ParamSet& params, const Checkpoint& ckpt, bool allow_missing = false);

// As a ParamSet of fresh leaves, in checkpoint order.
ParamSet checkpoint_params(const Checkpoint& ckpt);

}  // namespace mdcpc
