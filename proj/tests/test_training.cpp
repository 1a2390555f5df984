#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mdcpc/autograd.hpp"
#include "mdcpc/checkpoint.hpp"
#include "mdcpc/error.hpp"
#include "mdcpc/gradcheck.hpp"
#include "mdcpc/training.hpp"
#include "test_util.hpp"

using namespace mdcpc;
using tu::bitwise_equal;
using tu::TempDir;

namespace {

CpcConfig tiny_cpc() {
  CpcConfig c;
  c.encoder.latent_dim = 8;
  c.encoder.patch_size = 8;
  c.encoder.toy_width = 4;
  c.autoregressor.channels = 8;
  c.autoregressor.depth = 2;
  c.mask_kind = MaskKind::infill;
  c.image_size = 16;
  c.stride = 4;
  c.negatives = 4;
  return c;
}

ClassifierConfig tiny_classifier() {
  ClassifierConfig c;
  c.encoder = tiny_cpc().encoder;
  c.hidden = 16;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TrainConfig quick_pretrain(std::uint64_t seed) {
  TrainConfig t = pretrain_defaults();
  t.learning_rate = 1e-3;
  t.epochs = 2;
  t.batch_size = 8;
  t.seed = seed;
  return t;
}

}  // namespace

TEST(Defaults, MatchDocumentedValues) {
  const TrainConfig p = pretrain_defaults(), f = finetune_defaults();
  EXPECT_EQ(p.learning_rate, 1e-4);
  EXPECT_EQ(p.epochs, 20);
  EXPECT_EQ(p.batch_size, 16);
  EXPECT_EQ(f.learning_rate, 1e-4);
  EXPECT_EQ(f.epochs, 50);
  EXPECT_EQ(f.batch_size, 64);
  TrainConfig bad = p;
  bad.learning_rate = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = p;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  const TrainConfig back = train_config_from_json(to_json(f));
  EXPECT_EQ(back.epochs, 50);
  EXPECT_EQ(back.phase, Phase::finetune);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  TempDir dir;
  const CpcModel model(tiny_cpc(), 3);
  MetricsLog log;
  log.add(0, "valid", "info_nce", 2.5);
  const Checkpoint ckpt = cpc_checkpoint(model, quick_pretrain(4), log);
  save_checkpoint(dir / "a.ckpt", ckpt);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.kind, "cpc");
  EXPECT_EQ(back.config, ckpt.config);
  EXPECT_EQ(back.metrics, ckpt.metrics);
  EXPECT_EQ(back.rng_state, ckpt.rng_state);
  ASSERT_EQ(back.params.size(), model.params().names().size());
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    EXPECT_EQ(back.params[i].first, model.params().names()[i]);
    EXPECT_TRUE(bitwise_equal(back.params[i].second, model.params().vars()[i]->value));
  }
  const auto restored = cpc_from_checkpoint(back);
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(restored->params().vars()[i]->value, model.params().vars()[i]->value));
  }
  save_checkpoint(dir / "b.ckpt", back);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_THROW(classifier_from_checkpoint(back), ConfigError);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir dir;
  const CpcModel model(tiny_cpc(), 3);
  save_checkpoint(dir / "ok.ckpt", make_checkpoint("cpc", to_json(model.config()), model.params()));
  const std::string bytes = slurp(dir / "ok.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  EXPECT_THROW(load_checkpoint(write("tag.ckpt", "XXXXXXXX" + bytes.substr(8))), FormatError);
  EXPECT_THROW(load_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 8))), FormatError);
  EXPECT_THROW(load_checkpoint(write("long.ckpt", bytes + "x")), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IngestionError);

  CpcConfig other = tiny_cpc();
  other.encoder.latent_dim = other.autoregressor.channels = 4;
  CpcModel wrong(other, 1);
  EXPECT_THROW(restore_params(wrong.params(), load_checkpoint(dir / "ok.ckpt")), Error);
}

TEST(Metrics, CsvRoundTripIsExact) {
  TempDir dir;
  MetricsLog log(dir / "live.csv");
  log.add(0, "valid", "info_nce", 0.1 + 0.2);
  log.add(1, "train", "info_nce", 1.0 / 3.0);
  log.add(1, "valid", "info_nce", 2.0);
  log.write_csv(dir / "copy.csv");
  EXPECT_EQ(slurp(dir / "live.csv"), slurp(dir / "copy.csv"));
  EXPECT_EQ(slurp(dir / "live.csv").substr(0, 24), "epoch,split,metric,value");
  const auto rows = MetricsLog::read_csv(dir / "copy.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].value, 0.1 + 0.2);
  EXPECT_EQ(rows[1].value, 1.0 / 3.0);
  EXPECT_EQ(log.series("valid", "info_nce"), (std::vector<std::pair<int, Real>>{{0, 0.1 + 0.2}, {1, 2.0}}));
}

TEST(Pretrain, DeterministicMetricsAndWeights) {
  TempDir dir;
  const DatasetStore data = generate_synthetic(12, 16, 8);
  std::vector<std::string> csv;
  std::vector<Tensor> first;
  for (int run = 0; run < 2; ++run) {
    CpcModel model(tiny_cpc(), 5);
    const auto path = dir / ("m" + std::to_string(run) + ".csv");
    {
      MetricsLog log(path);
      pretrain_cpc(model, data, quick_pretrain(6), log);
    }
    csv.push_back(slurp(path));
    if (run == 0) {
      for (const auto& v : model.params().vars()) first.push_back(v->value);
    } else {
      for (std::size_t i = 0; i < first.size(); ++i) {
        EXPECT_TRUE(bitwise_equal(first[i], model.params().vars()[i]->value));
      }
    }
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_NE(csv[0].find("0,valid,info_nce,"), std::string::npos);
}

TEST(Pretrain, KeepsBestParametersAndStopsEarly) {
  const DatasetStore data = generate_synthetic(12, 16, 8);
  CpcModel model(tiny_cpc(), 5);
  TrainConfig t = quick_pretrain(6);
  t.learning_rate = 0.5;  // large enough to make validation loss erratic
  t.epochs = 8;
  t.patience = 2;
  MetricsLog log;
  PretrainResult r;
  try {
    r = pretrain_cpc(model, data, t, log);
  } catch (const NumericError&) {
    GTEST_SKIP() << "diverged before early stop";
  }
  const auto valid = log.series("valid", "info_nce");
  Real best = valid.front().second;
  int best_epoch = 0;
  for (const auto& [e, v] : valid)
    if (v < best) best = v, best_epoch = e;
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_valid_loss, best);
  EXPECT_LE(r.epochs_run, t.epochs);
  if (r.early_stopped) EXPECT_EQ(r.epochs_run, best_epoch + t.patience);
  // The model holds the best parameters.
  EXPECT_NEAR(evaluate_info_nce(model, data.valid, t.batch_size, derive_seed(t.seed, 0x7A11D)), best, 1e-9);
}

TEST(Finetune, ConstantPredictorScoresHalfOnBalancedSplit) {
  const DatasetStore data = generate_synthetic(10, 16, 2);
  Classifier clf(tiny_classifier(), 1);
  clf.params().get("classifier.output.weight")->value.fill(0.0);
  Tensor& b = clf.params().get("classifier.output.bias")->value;
  b.fill(0.0);
  b[1] = 1.0;
  const Evaluation e = evaluate(clf, data.test);
  EXPECT_EQ(e.count, data.test.size());
  EXPECT_DOUBLE_EQ(e.accuracy, 0.5);
  EXPECT_THROW(evaluate(clf, {}), InvalidArgument);
}

TEST(Finetune, MemorizesTenSamples) {
  DatasetStore data = generate_synthetic(20, 16, 3);
  const auto ids = sample_label_subset(data, 10, 4);
  ASSERT_EQ(ids.size(), 10u);
  DatasetStore small;
  small.metadata = data.metadata;
  for (const auto& img : data.train)
    if (std::find(ids.begin(), ids.end(), img.id) != ids.end()) small.train.push_back(img);
  small.valid = small.test = small.train;
  Classifier clf(tiny_classifier(), 5);
  TrainConfig t = finetune_defaults();
  t.learning_rate = 3e-3;
  t.batch_size = 10;
  t.epochs = 200;
  t.patience = 200;
  t.augment = false;
  t.seed = 6;
  MetricsLog log;
  const FinetuneResult r = finetune_classifier(clf, small, {}, t, log);
  EXPECT_EQ(evaluate(clf, small.train).accuracy, 1.0);
  EXPECT_EQ(r.test_accuracy, 1.0);
}

TEST(Finetune, SubsetRestrictsTrainingSet) {
  const DatasetStore data = generate_synthetic(10, 16, 2);
  Classifier clf(tiny_classifier(), 1);
  TrainConfig t = finetune_defaults();
  t.epochs = 1;
  t.seed = 1;
  MetricsLog log;
  const auto ids = sample_label_subset(data, 4, 1);
  finetune_classifier(clf, data, ids, t, log);
  const auto train_count = log.series("train", "samples");
  ASSERT_FALSE(train_count.empty());
  EXPECT_EQ(train_count.back().second, 4.0);
  EXPECT_THROW(finetune_classifier(clf, data, {"no-such-id"}, t, log), Error);
}

TEST(Classifier, LoadsPretrainedEncoder) {
  const CpcModel model(tiny_cpc(), 9);
  Classifier clf(tiny_classifier(), 1);
  clf.load_encoder(model.params());
  for (const auto& name : clf.encoder().params().names()) {
    EXPECT_TRUE(bitwise_equal(clf.params().get(name)->value, model.params().get(name)->value));
  }
  EXPECT_THROW(clf.load_encoder(ParamSet{}), ConfigError);
}

TEST(Gradcheck, RelativeErrorFormula) {
  EXPECT_EQ(gradient_relative_error(0, 0), 0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1.0, 1.5), 0.5 / 1.5);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-12, 0), 1e-12 / 1e-8);
}

TEST(Gradcheck, EmptyParameterSetGivesEmptyReport) {
  const auto report = gradient_check(ParamSet{}, [] { return ag::constant(Tensor({1}, {1.0})); });
  EXPECT_TRUE(report.groups.empty());
  EXPECT_EQ(report.checked, 0u);
  EXPECT_EQ(report.max_relative_error, 0);
}

TEST(Gradcheck, CorruptedBackwardRuleIsCaught) {
  ParamSet ps;
  ag::Var x = ps.add("x", tu::random_tensor({2, 3}, 1));
  auto objective = [&] { return ag::sum(ag::elu(x)); };
  EXPECT_LE(gradient_check(ps, objective).max_relative_error, 1e-6);
  ag::ScopedBackwardFault fault;
  EXPECT_GT(gradient_check(ps, objective).max_relative_error, 1e-2);
}
