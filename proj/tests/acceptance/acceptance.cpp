// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mdcpc/causality.hpp"
#include "mdcpc/checkpoint.hpp"
#include "mdcpc/gradcheck.hpp"
#include "mdcpc/patching.hpp"
#include "mdcpc/training.hpp"

using namespace mdcpc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small-image setup used for the training criteria: 32-pixel images, 8-pixel
// patches at stride 4 (7x7 grid), 16-d latents.
CpcConfig small_config(MaskKind mask, Directional dir) {
  CpcConfig c;
  c.encoder.latent_dim = 16;
  c.encoder.patch_size = 8;
  c.encoder.toy_width = 16;
  c.autoregressor.channels = 16;
  c.autoregressor.directional = dir;
  c.mask_kind = mask;
  c.image_size = 32;
  c.stride = 4;
  c.negatives = kDefaultNegatives;
  return c;
}

void geometry() {
  const int g = grid_shape(96, 24, 12);
  ImageSample img;
  img.size = 96;
  img.pixels.resize(96 * 96 * 3);
  Rng rng(1);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  const PatchGrid pg = extract_patches(img, 24, 12);
  bool ok = g == 7 && pg.grid == 7 && pg.pixels.size() == 49u * 24 * 24 * 3;
  // Every patch pixel equals the source pixel it claims, so neighbours share
  // exactly patch - stride = 12 columns/rows.
  int shared_cols = 0;
  for (int r = 0; r < 7 && ok; ++r)
    for (int c = 0; c < 7 && ok; ++c)
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
          for (int ch = 0; ch < 3; ++ch)
            ok = ok && pg.at(r, c, y, x, ch) == img.pixels[((r * 12 + y) * 96 + (c * 12 + x)) * 3 + ch];
  for (int x = 0; x < 24; ++x) {
    bool same = true;
    for (int y = 0; y < 24; ++y)
      for (int ch = 0; ch < 3; ++ch) same = same && x + 12 < 24 && pg.at(0, 1, y, x, ch) == pg.at(0, 0, y, x + 12, ch);
    shared_cols += same;
  }
  ok = ok && shared_cols == 12;
  report("1 geometry", ok, "grid=" + std::to_string(g) + " patches=" + std::to_string(pg.grid * pg.grid) +
                               " overlap=" + std::to_string(shared_cols) + "px");
}

void causality() {
  const int trials = 20;
  const auto t0 = Clock::now();
  CpcConfig single = small_config(MaskKind::top_down, Directional::single);
  const CpcModel td(single, 11);
  const auto raster = check_raster_causality(td.autoregressor(), 7, trials, 1);
  const auto rows = check_row_causality(td.autoregressor(), 7, trials, 2);
  const auto td_leak = check_target_leakage(td, trials, 3);
  CpcConfig multi = small_config(MaskKind::infill, Directional::multi);
  const CpcModel mi(multi, 12);
  bool all_a = true;
  for (auto m : mi.autoregressor().config().mask_pattern) all_a = all_a && m == MaskType::A;
  const auto self = check_self_position_independence(mi.autoregressor(), 7, trials, 4);
  const auto leak = check_target_leakage(mi, trials, 5);
  const double secs = seconds_since(t0);
  const bool fast = secs < 60;
  auto dev = [](const CausalityReport& r) { return std::max(r.max_delta, r.max_gradient); };
  report("2a single-directional causality", raster.passed && rows.passed && td_leak.passed && fast,
         "raster dev=" + fmt(dev(raster)) + " row dev=" + fmt(dev(rows)) + " top-down leak dev=" + fmt(dev(td_leak)));
  report("2b multi-directional self-independence", all_a && self.passed && fast,
         "all mask A=" + std::string(all_a ? "yes" : "no") + " dev=" + fmt(dev(self)));
  report("2c in-fill leakage", leak.passed && fast,
         "dev=" + fmt(dev(leak)) + " suite time=" + fmt(secs) + "s (" + std::to_string(trials) + " trials each)");
}

void initial_loss(const DatasetStore& data) {
  const CpcModel model(small_config(MaskKind::infill, Directional::multi), 21);
  Rng rng(22);
  const int batch = 17;
  Real total = 0;
  for (int b = 0; b < 100; ++b) {
    std::vector<const ImageSample*> imgs;
    for (int i = 0; i < batch; ++i) imgs.push_back(&data.train[(static_cast<std::size_t>(b) * batch + i) % data.train.size()]);
    total += model.loss(imgs, rng)->value[0];
  }
  const Real mean = total / 100;
  report("3 initial InfoNCE", std::abs(mean - std::log(17.0)) <= 0.15,
         "mean=" + fmt(mean) + " ln17=" + fmt(std::log(17.0)));
}

void info_nce_oracle() {
  Rng rng(31);
  std::normal_distribution<Real> g(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int targets = 1 + static_cast<int>(rng() % 5), d = 2 + static_cast<int>(rng() % 8);
    const int n = 1 + static_cast<int>(rng() % 16);
    auto vec = [&] {
      std::vector<Real> v(static_cast<std::size_t>(d));
      for (auto& x : v) x = g(rng);
      return v;
    };
    std::vector<std::vector<Real>> preds, pos;
    std::vector<std::vector<std::vector<Real>>> negs;
    long double oracle = 0;
    for (int t = 0; t < targets; ++t) {
      preds.push_back(vec());
      pos.push_back(vec());
      negs.emplace_back();
      for (int k = 0; k < n; ++k) negs.back().push_back(vec());
      // Softmax cross-entropy with the positive as class 0.
      std::vector<long double> logits;
      for (const auto* cand : {&pos.back()}) {
        long double s = 0;
        for (int i = 0; i < d; ++i) s += static_cast<long double>(preds.back()[i]) * (*cand)[i];
        logits.push_back(s);
      }
      for (const auto& cand : negs.back()) {
        long double s = 0;
        for (int i = 0; i < d; ++i) s += static_cast<long double>(preds.back()[i]) * cand[i];
        logits.push_back(s);
      }
      long double z = 0;
      for (auto l : logits) z += std::exp(l);
      oracle += -std::log(std::exp(logits[0]) / z);
    }
    oracle /= targets;
    worst = std::max(worst, std::abs(static_cast<double>(oracle) - info_nce_loss(preds, pos, negs)));
  }
  report("4 InfoNCE oracle", worst <= 1e-6, "max |diff| over 100 instances=" + fmt(worst));
}

void gradcheck() {
  const CpcConfig c = gradcheck_cpc_config();
  const std::size_t params = CpcModel(c, 1).params().count();
  const auto r = gradient_check_cpc(c, 1);
  report("5 gradient check", params <= 1000 && r.checked == params && r.max_relative_error <= 1e-4,
         "params=" + std::to_string(params) + " max rel err=" + fmt(r.max_relative_error));
}

std::unique_ptr<CpcModel> trainability(const DatasetStore& data) {
  auto model = std::make_unique<CpcModel>(small_config(MaskKind::infill, Directional::multi), 41);
  TrainConfig t = pretrain_defaults();
  t.epochs = 10;
  t.seed = 42;
  MetricsLog log;
  const auto t0 = Clock::now();
  const PretrainResult r = pretrain_cpc(*model, data, t, log);
  const double secs = seconds_since(t0);
  const Real drop = 1 - r.best_valid_loss / r.initial_valid_loss;
  report("6 trainability", drop >= 0.2 && secs < 1800,
         "images=" + std::to_string(data.total()) + " valid InfoNCE " + fmt(r.initial_valid_loss) + " -> " +
             fmt(r.best_valid_loss) + " (drop " + fmt(100 * drop) + "%) in " + fmt(secs) + "s, lr=" +
             fmt(t.learning_rate));
  return model;
}

void label_efficiency(const DatasetStore& data, const CpcModel& pretrained) {
  ClassifierConfig cc;
  cc.encoder = pretrained.config().encoder;
  Real rand_sum = 0, pre_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ids = sample_label_subset(data, 32, derive_seed(seed, 0x5B5E7, 32));
    TrainConfig t = finetune_defaults();
    t.seed = seed;
    t.subset_size = 32;
    MetricsLog l1, l2;
    Classifier random_init(cc, seed);
    const Real ra = finetune_classifier(random_init, data, ids, t, l1).test_accuracy;
    Classifier pre_init(cc, seed);
    pre_init.load_encoder(pretrained.params());
    const Real pa = finetune_classifier(pre_init, data, ids, t, l2).test_accuracy;
    rand_sum += ra;
    pre_sum += pa;
    per_seed += " " + fmt(ra) + "/" + fmt(pa);
  }
  const Real gap = 100 * (pre_sum - rand_sum) / 5;
  report("7 label efficiency", gap >= 3,
         "32 labels, 5 seeds: random " + fmt(rand_sum / 5) + " vs pretrained " + fmt(pre_sum / 5) + " (+" + fmt(gap) +
             " points; per seed random/pretrained" + per_seed + ")");
}

void determinism(const DatasetStore& data, const CpcModel& trained) {
  const fs::path dir = fs::temp_directory_path() / "mdcpc_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  DatasetStore small = data;
  small.train.resize(64);
  small.valid.resize(32);
  std::vector<std::string> csv;
  for (int run = 0; run < 2; ++run) {
    CpcModel model(small_config(MaskKind::infill, Directional::multi), 51);
    TrainConfig t = pretrain_defaults();
    t.epochs = 2;
    t.seed = 52;
    const fs::path p = dir / ("metrics" + std::to_string(run) + ".csv");
    {
      MetricsLog log(p);
      pretrain_cpc(model, small, t, log);
    }
    csv.push_back(slurp(p));
  }
  const bool same_csv = !csv[0].empty() && csv[0] == csv[1];

  MetricsLog none;
  save_checkpoint(dir / "a.ckpt", cpc_checkpoint(trained, pretrain_defaults(), none));
  const auto restored = cpc_from_checkpoint(load_checkpoint(dir / "a.ckpt"));
  bool bitwise = restored->params().names() == trained.params().names();
  for (std::size_t i = 0; bitwise && i < trained.params().vars().size(); ++i) {
    bitwise = restored->params().vars()[i]->value.storage() == trained.params().vars()[i]->value.storage();
  }
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  const bool same_file = slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt");
  fs::remove_all(dir);
  report("8 determinism", same_csv && bitwise && same_file,
         std::string("metric CSVs identical=") + (same_csv ? "yes" : "no") +
             " checkpoint params bitwise=" + (bitwise ? "yes" : "no") + " re-save identical=" + (same_file ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  geometry();
  causality();
  // 1000 images per class: 1200 train, 400 valid, 400 test.
  const DatasetStore data = generate_synthetic(1000, 32, 7);
  initial_loss(data);
  info_nce_oracle();
  gradcheck();
  const auto model = trainability(data);
  label_efficiency(data, *model);
  determinism(data, *model);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " (" << fmt(seconds_since(t0))
            << "s)" << std::endl;
  return failures == 0 ? 0 : 1;
}
