#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdcpc/checkpoint.hpp"
#include "mdcpc/data.hpp"
#include "mdcpc/model.hpp"

namespace mdcpc {

enum class Phase { pretrain, finetune };
std::string to_string(Phase p);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  Real learning_rate = 1e-4;
  int epochs = 20;
  int batch_size = 16;
  int patience = 5;
  std::uint64_t seed = 0;
  bool augment = true;
  std::optional<int> subset_size;  // finetune only
  // 0 means use everything.
  int max_train_batches = 0;
  int max_valid_images = 0;

  void validate() const;
};

// lr 1e-4, 20 epochs, batch 16.
TrainConfig pretrain_defaults();
// lr 1e-4, 50 epochs, batch 64.
TrainConfig finetune_defaults();

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct MetricRow {
  int epoch = 0;
  std::string split;
  std::string metric;
  Real value = 0;
};

// Rows in insertion order. With a path, every row is appended to the CSV
// (epoch,split,metric,value) as soon as it is recorded.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& csv_path);

  void add(int epoch, const std::string& split, const std::string& metric, Real value);
  const std::vector<MetricRow>& rows() const { return rows_; }
  // (epoch, value) pairs for one split/metric.
  std::vector<std::pair<int, Real>> series(const std::string& split, const std::string& metric) const;

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
  static std::vector<MetricRow> read_csv(const std::filesystem::path& path);

 private:
  std::vector<MetricRow> rows_;
  std::shared_ptr<std::ofstream> sink_;
};

std::string format_real(Real v);

using ProgressFn = std::function<void(const std::string&)>;

struct PretrainResult {
  int epochs_run = 0;
  int best_epoch = 0;
  Real initial_valid_loss = 0;
  Real best_valid_loss = 0;
  bool early_stopped = false;
};

// Joint InfoNCE training of encoder, autoregressor and head with per-batch
// dihedral augmentation. Epoch 0 is the validation loss before any update.
// Validation negatives come from a fixed seed so epochs are comparable. The
// parameters with the lowest validation loss are left in the model. A
// non-finite loss restores those parameters and throws NumericError.
PretrainResult pretrain_cpc(CpcModel& model, const DatasetStore& store, const TrainConfig& config,
                            MetricsLog& log, const ProgressFn& progress = {});

// Mean InfoNCE over `images` in batches, negatives drawn from `seed`.
Real evaluate_info_nce(const CpcModel& model, const std::vector<ImageSample>& images, int batch_size,
                       std::uint64_t seed, int max_images = 0);

struct FinetuneResult {
  int epochs_run = 0;
  int best_epoch = 0;
  Real best_valid_accuracy = 0;
  Real test_accuracy = 0;
  bool early_stopped = false;
};

// Trains every classifier weight with softmax cross-entropy on the train
// samples named in subset_ids (all of train when empty). Early stopping on
// validation accuracy, ties broken by validation loss. The best parameters
// are left in the classifier and scored on the test split.
FinetuneResult finetune_classifier(Classifier& classifier, const DatasetStore& store,
                                   const std::vector<std::string>& subset_ids, const TrainConfig& config,
                                   MetricsLog& log, const ProgressFn& progress = {});

struct Evaluation {
  Real accuracy = 0;
  Real loss = 0;
  std::size_t count = 0;
};

// Deterministic, no augmentation. Throws InvalidArgument on an empty split.
Evaluation evaluate(const Classifier& classifier, const std::vector<ImageSample>& images, int batch_size = 64);

Checkpoint cpc_checkpoint(const CpcModel& model, const TrainConfig& train, const MetricsLog& log);
Checkpoint classifier_checkpoint(const Classifier& classifier, const TrainConfig& train, const MetricsLog& log);
// Throw ConfigError when the checkpoint holds a different kind of model.
std::unique_ptr<CpcModel> cpc_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<Classifier> classifier_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mdcpc
