#include "mdcpc/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mdcpc/error.hpp"

namespace mdcpc {

using nlohmann::json;

std::string to_string(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (phase == Phase::pretrain && batch_size < 2) {
    throw ConfigError("pretraining needs batch size >= 2 so that negatives exist");
  }
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (subset_size && *subset_size < 1) throw ConfigError("subset size must be positive");
}

TrainConfig pretrain_defaults() {
  TrainConfig c;
  c.phase = Phase::pretrain;
  c.learning_rate = 1e-4;
  c.epochs = 20;
  c.batch_size = 16;
  return c;
}

TrainConfig finetune_defaults() {
  TrainConfig c;
  c.phase = Phase::finetune;
  c.learning_rate = 1e-4;
  c.epochs = 50;
  c.batch_size = 64;
  return c;
}

json to_json(const TrainConfig& c) {
  json j{{"phase", to_string(c.phase)},
         {"optimizer", "adam"},
         {"learning_rate", c.learning_rate},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"patience", c.patience},
         {"seed", c.seed},
         {"augment", c.augment},
         {"max_train_batches", c.max_train_batches},
         {"max_valid_images", c.max_valid_images}};
  j["subset_size"] = c.subset_size ? json(*c.subset_size) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.phase = j.at("phase").get<std::string>() == "finetune" ? Phase::finetune : Phase::pretrain;
  c.learning_rate = j.at("learning_rate").get<Real>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<bool>();
  c.max_train_batches = j.value("max_train_batches", 0);
  c.max_valid_images = j.value("max_valid_images", 0);
  if (j.contains("subset_size") && !j.at("subset_size").is_null()) c.subset_size = j.at("subset_size").get<int>();
  return c;
}

std::string format_real(Real v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

MetricsLog::MetricsLog(const std::filesystem::path& csv_path) {
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  const bool fresh = !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
  sink_ = std::make_shared<std::ofstream>(csv_path, std::ios::app);
  if (!*sink_) throw IngestionError("cannot open metrics file " + csv_path.string());
  if (fresh) *sink_ << "epoch,split,metric,value\n" << std::flush;
}

void MetricsLog::add(int epoch, const std::string& split, const std::string& metric, Real value) {
  rows_.push_back({epoch, split, metric, value});
  if (sink_) *sink_ << epoch << ',' << split << ',' << metric << ',' << format_real(value) << '\n' << std::flush;
}

std::vector<std::pair<int, Real>> MetricsLog::series(const std::string& split, const std::string& metric) const {
  std::vector<std::pair<int, Real>> out;
  for (const auto& r : rows_) {
    if (r.split == split && r.metric == metric) out.emplace_back(r.epoch, r.value);
  }
  return out;
}

json MetricsLog::to_json() const {
  json rows = json::array();
  for (const auto& r : rows_) rows.push_back({r.epoch, r.split, r.metric, r.value});
  return rows;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "epoch,split,metric,value\n";
  for (const auto& r : rows_) out << r.epoch << ',' << r.split << ',' << r.metric << ',' << format_real(r.value) << '\n';
}

std::vector<MetricRow> MetricsLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  if (line != "epoch,split,metric,value") throw FormatError(path.string() + ": unexpected metrics header '" + line + "'");
  std::vector<MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& s : f) std::getline(ss, s, ',');
    try {
      rows.push_back({std::stoi(f[0]), f[1], f[2], std::stod(f[3])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed metrics row");
    }
  }
  return rows;
}

namespace {

template <typename T>
std::vector<const T*> pointers(const std::vector<T>& v, std::size_t begin, std::size_t end) {
  std::vector<const T*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&v[i]);
  return out;
}

bool finite_grads(const ParamSet& params) {
  for (const auto& v : params.vars()) {
    if (!v->grad.empty() && !v->grad.all_finite()) return false;
  }
  return true;
}

constexpr std::uint64_t kValidStream = 0x7A11D;
constexpr std::uint64_t kShuffleStream = 0x5EED;
constexpr std::uint64_t kAugmentStream = 0xA06;
constexpr std::uint64_t kNegativeStream = 0x4E6;

}  // namespace

Real evaluate_info_nce(const CpcModel& model, const std::vector<ImageSample>& images, int batch_size,
                       std::uint64_t seed, int max_images) {
  std::size_t n = images.size();
  if (max_images > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(max_images));
  if (n < 2) throw InvalidArgument("InfoNCE evaluation needs at least two images");
  Rng rng(seed);
  Real total = 0;
  std::size_t weight = 0;
  for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(n, b + static_cast<std::size_t>(batch_size));
    if (e - b < 2) break;
    const auto batch = pointers(images, b, e);
    const Real l = model.loss(batch, rng)->value[0];
    total += l * static_cast<Real>(e - b);
    weight += e - b;
  }
  return total / static_cast<Real>(weight);
}

PretrainResult pretrain_cpc(CpcModel& model, const DatasetStore& store, const TrainConfig& config, MetricsLog& log,
                            const ProgressFn& progress) {
  config.validate();
  if (config.phase != Phase::pretrain) throw ConfigError("pretrain_cpc needs a pretrain config");
  if (store.train.size() < 2) throw InvalidArgument("pretraining needs at least two training images");
  if (store.valid.size() < 2) throw InvalidArgument("pretraining needs a validation split of at least two images");

  const std::uint64_t valid_seed = derive_seed(config.seed, kValidStream);
  auto valid_loss = [&] {
    return evaluate_info_nce(model, store.valid, config.batch_size, valid_seed, config.max_valid_images);
  };

  PretrainResult result;
  result.initial_valid_loss = valid_loss();
  result.best_valid_loss = result.initial_valid_loss;
  log.add(0, "valid", "info_nce", result.initial_valid_loss);
  if (progress) progress("epoch 0 valid info_nce " + format_real(result.initial_valid_loss));
  if (!std::isfinite(result.initial_valid_loss)) throw NumericError("non-finite validation loss before training");

  auto best = model.params().snapshot();
  Adam adam(model.params(), AdamOptions{config.learning_rate});
  std::vector<std::size_t> order(store.train.size());
  int stale = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle);
    Rng aug(derive_seed(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch)));
    Rng neg(derive_seed(config.seed, kNegativeStream, static_cast<std::uint64_t>(epoch)));

    Real train_total = 0;
    std::size_t train_weight = 0;
    int batches = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t b = 0; b + 1 < order.size(); b += bs) {
      if (config.max_train_batches > 0 && batches >= config.max_train_batches) break;
      const std::size_t e = std::min(order.size(), b + bs);
      if (e - b < 2) break;
      std::vector<ImageSample> images;
      images.reserve(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto& src = store.train[order[i]];
        images.push_back(config.augment ? augment(src, aug) : src);
      }
      const auto batch = pointers(images, 0, images.size());
      model.params().zero_grad();
      ag::Var loss = model.loss(batch, neg);
      const Real value = loss->value[0];
      if (std::isfinite(value)) ag::backward(loss);
      if (!std::isfinite(value) || !finite_grads(model.params())) {
        model.params().restore(best);
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (loss " + format_real(value) +
                           "); parameters restored to epoch " + std::to_string(result.best_epoch));
      }
      adam.step();
      train_total += value * static_cast<Real>(e - b);
      train_weight += e - b;
      ++batches;
    }
    const Real train_loss = train_weight ? train_total / static_cast<Real>(train_weight) : 0.0;
    const Real vloss = valid_loss();
    log.add(epoch, "train", "info_nce", train_loss);
    log.add(epoch, "valid", "info_nce", vloss);
    result.epochs_run = epoch;
    if (progress) {
      progress("epoch " + std::to_string(epoch) + " train info_nce " + format_real(train_loss) + " valid info_nce " +
               format_real(vloss));
    }
    if (!std::isfinite(vloss)) {
      model.params().restore(best);
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) +
                         "; parameters restored to epoch " + std::to_string(result.best_epoch));
    }
    if (vloss < result.best_valid_loss) {
      result.best_valid_loss = vloss;
      result.best_epoch = epoch;
      best = model.params().snapshot();
      stale = 0;
    } else if (++stale >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  model.params().restore(best);
  return result;
}

Evaluation evaluate(const Classifier& classifier, const std::vector<ImageSample>& images, int batch_size) {
  if (images.empty()) throw InvalidArgument("cannot evaluate on an empty split");
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  Evaluation ev;
  std::size_t correct = 0;
  Real loss = 0;
  for (std::size_t b = 0; b < images.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(images.size(), b + static_cast<std::size_t>(batch_size));
    const auto batch = pointers(images, b, e);
    std::vector<int> labels;
    for (const auto* img : batch) {
      if (!img->label) throw InvalidArgument("sample " + img->id + " has no label");
      labels.push_back(*img->label);
    }
    ag::Var logits = classifier.logits(ag::constant(images_to_tensor(batch)));
    loss += ag::softmax_cross_entropy(logits, labels)->value[0] * static_cast<Real>(e - b);
    const int k = logits->value.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Real* row = logits->value.data() + i * static_cast<std::size_t>(k);
      if (std::max_element(row, row + k) - row == labels[i]) ++correct;
    }
  }
  ev.count = images.size();
  ev.accuracy = static_cast<Real>(correct) / static_cast<Real>(ev.count);
  ev.loss = loss / static_cast<Real>(ev.count);
  return ev;
}

FinetuneResult finetune_classifier(Classifier& classifier, const DatasetStore& store,
                                   const std::vector<std::string>& subset_ids, const TrainConfig& config,
                                   MetricsLog& log, const ProgressFn& progress) {
  config.validate();
  if (config.phase != Phase::finetune) throw ConfigError("finetune_classifier needs a finetune config");
  std::vector<const ImageSample*> train;
  if (subset_ids.empty()) {
    for (const auto& s : store.train) train.push_back(&s);
  } else {
    std::map<std::string, const ImageSample*> by_id;
    for (const auto& s : store.train) by_id.emplace(s.id, &s);
    for (const auto& id : subset_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InvalidArgument("subset id " + id + " is not in the training split");
      train.push_back(it->second);
    }
  }
  if (train.empty()) throw InvalidArgument("no training samples");
  for (const auto* s : train) {
    if (!s->label) throw InvalidArgument("sample " + s->id + " has no label");
  }
  if (store.valid.empty()) throw InvalidArgument("fine-tuning needs a validation split for early stopping");

  std::vector<ImageSample> valid_view;
  const std::vector<ImageSample>* valid = &store.valid;
  if (config.max_valid_images > 0 && store.valid.size() > static_cast<std::size_t>(config.max_valid_images)) {
    valid_view.assign(store.valid.begin(), store.valid.begin() + config.max_valid_images);
    valid = &valid_view;
  }

  FinetuneResult result;
  Evaluation v0 = evaluate(classifier, *valid);
  log.add(0, "train", "samples", static_cast<Real>(train.size()));
  log.add(0, "valid", "accuracy", v0.accuracy);
  log.add(0, "valid", "cross_entropy", v0.loss);
  Real best_acc = v0.accuracy, best_loss = v0.loss;
  result.best_valid_accuracy = best_acc;
  auto best = classifier.params().snapshot();

  Adam adam(classifier.params(), AdamOptions{config.learning_rate});
  std::vector<std::size_t> order(train.size());
  int stale = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle);
    Rng aug(derive_seed(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch)));
    Real train_total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      if (config.max_train_batches > 0 && batches >= config.max_train_batches) break;
      const std::size_t e = std::min(order.size(), b + bs);
      std::vector<ImageSample> images;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        const auto& src = *train[order[i]];
        images.push_back(config.augment ? augment(src, aug) : src);
        labels.push_back(*src.label);
      }
      classifier.params().zero_grad();
      ag::Var loss = ag::softmax_cross_entropy(
          classifier.logits(ag::constant(images_to_tensor(pointers(images, 0, images.size())))), labels);
      const Real value = loss->value[0];
      if (std::isfinite(value)) ag::backward(loss);
      if (!std::isfinite(value) || !finite_grads(classifier.params())) {
        classifier.params().restore(best);
        throw NumericError("fine-tuning diverged at epoch " + std::to_string(epoch) + " (loss " + format_real(value) +
                           "); parameters restored to epoch " + std::to_string(result.best_epoch));
      }
      adam.step();
      train_total += value * static_cast<Real>(e - b);
      ++batches;
    }
    const Evaluation v = evaluate(classifier, *valid);
    log.add(epoch, "train", "cross_entropy", train_total / static_cast<Real>(train.size()));
    log.add(epoch, "valid", "accuracy", v.accuracy);
    log.add(epoch, "valid", "cross_entropy", v.loss);
    result.epochs_run = epoch;
    if (progress) {
      progress("epoch " + std::to_string(epoch) + " valid accuracy " + format_real(v.accuracy) + " valid loss " +
               format_real(v.loss));
    }
    if (v.accuracy > best_acc || (v.accuracy == best_acc && v.loss < best_loss)) {
      best_acc = v.accuracy;
      best_loss = v.loss;
      result.best_epoch = epoch;
      best = classifier.params().snapshot();
      stale = 0;
    } else if (++stale >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  classifier.params().restore(best);
  result.best_valid_accuracy = best_acc;
  if (!store.test.empty()) {
    result.test_accuracy = evaluate(classifier, store.test).accuracy;
    log.add(result.best_epoch, "test", "accuracy", result.test_accuracy);
  }
  return result;
}

Checkpoint cpc_checkpoint(const CpcModel& model, const TrainConfig& train, const MetricsLog& log) {
  Checkpoint c = make_checkpoint("cpc", to_json(model.config()), model.params());
  c.metrics = {{"history", log.to_json()}};
  c.extra = {{"train", to_json(train)}};
  c.rng_state = rng_state(Rng(train.seed));
  return c;
}

Checkpoint classifier_checkpoint(const Classifier& classifier, const TrainConfig& train, const MetricsLog& log) {
  Checkpoint c = make_checkpoint("classifier", to_json(classifier.config()), classifier.params());
  c.metrics = {{"history", log.to_json()}};
  c.extra = {{"train", to_json(train)}};
  c.rng_state = rng_state(Rng(train.seed));
  return c;
}

std::unique_ptr<CpcModel> cpc_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "cpc") throw ConfigError("expected a CPC checkpoint, found '" + ckpt.kind + "'");
  auto model = std::make_unique<CpcModel>(cpc_config_from_json(ckpt.config), 0);
  restore_params(model->params(), ckpt);
  return model;
}

std::unique_ptr<Classifier> classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "classifier") {
    throw ConfigError("checkpoint holds no classifier parameters (kind '" + ckpt.kind + "')");
  }
  auto clf = std::make_unique<Classifier>(classifier_config_from_json(ckpt.config), 0);
  restore_params(clf->params(), ckpt);
  return clf;
}

}  // namespace mdcpc
