#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mdcpc/training.hpp"

namespace mdcpc {

// "none" is the random-init baseline; the others name a pretraining variant
// as <directional>_<mask>.
inline const std::vector<std::string> kSweepVariants = {"none", "single_top_down", "single_infill",
                                                        "multi_top_down", "multi_infill"};
inline const std::vector<int> kSweepSizes = {10, 32, 100, 316, 1000, 3162, 10000, 31624, 100000};

bool is_sweep_variant(const std::string& name);

struct SweepRow {
  std::string variant;
  int subset_size = 0;
  std::uint64_t seed = 0;
  Real test_accuracy = 0;
};

struct SweepSummaryRow {
  std::string variant;
  int subset_size = 0;
  int runs = 0;
  Real mean = 0;
  Real stddev = 0;  // sample standard deviation, 0 for a single run
};

struct SweepConfig {
  std::vector<std::string> variants = kSweepVariants;
  std::vector<int> sizes = kSweepSizes;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::map<std::string, std::filesystem::path> checkpoints;  // variant -> CPC checkpoint
  // The encoder section is taken from the checkpoints when any are given.
  ClassifierConfig classifier;
  TrainConfig finetune = finetune_defaults();
  // Sizes larger than the training split are skipped rather than failing.
  bool skip_oversized = true;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<int> skipped_sizes;
  std::vector<SweepSummaryRow> summary() const;
};

using SweepProgressFn = std::function<void(const SweepRow&)>;

// Fine-tunes one fresh classifier per (variant, size, seed). Every variant
// other than "none" needs a checkpoint; a missing one throws ConfigError
// naming the variant before any training starts.
SweepResult run_sweep(const DatasetStore& store, const SweepConfig& config, const SweepProgressFn& progress = {});

std::vector<SweepSummaryRow> summarize(const std::vector<SweepRow>& rows);

// variant,subset_size,seed,test_accuracy
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);
// variant,subset_size,runs,mean,std
void write_summary_csv(const std::filesystem::path& path, const std::vector<SweepSummaryRow>& rows);

}  // namespace mdcpc
