#include "mdcpc/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mdcpc/error.hpp"

namespace mdcpc {

bool is_sweep_variant(const std::string& name) {
  return std::find(kSweepVariants.begin(), kSweepVariants.end(), name) != kSweepVariants.end();
}

std::vector<SweepSummaryRow> summarize(const std::vector<SweepRow>& rows) {
  std::vector<SweepSummaryRow> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummaryRow& s) {
      return s.variant == r.variant && s.subset_size == r.subset_size;
    });
    if (it == out.end()) {
      out.push_back({r.variant, r.subset_size, 0, 0, 0});
      it = out.end() - 1;
    }
    it->runs += 1;
    it->mean += r.test_accuracy;
  }
  for (auto& s : out) {
    s.mean /= s.runs;
    Real ss = 0;
    for (const auto& r : rows) {
      if (r.variant == s.variant && r.subset_size == s.subset_size) ss += (r.test_accuracy - s.mean) * (r.test_accuracy - s.mean);
    }
    s.stddev = s.runs > 1 ? std::sqrt(ss / (s.runs - 1)) : 0.0;
  }
  return out;
}

std::vector<SweepSummaryRow> SweepResult::summary() const { return summarize(rows); }

SweepResult run_sweep(const DatasetStore& store, const SweepConfig& config, const SweepProgressFn& progress) {
  if (config.variants.empty() || config.sizes.empty() || config.seeds.empty()) {
    throw InvalidArgument("sweep needs at least one variant, size and seed");
  }
  std::map<std::string, Checkpoint> pretrained;
  for (const auto& v : config.variants) {
    if (!is_sweep_variant(v)) throw ConfigError("unknown sweep variant '" + v + "'");
    if (v == "none") continue;
    auto it = config.checkpoints.find(v);
    if (it == config.checkpoints.end() || !std::filesystem::exists(it->second)) {
      throw ConfigError("missing pretrained checkpoint for variant '" + v + "'");
    }
    pretrained.emplace(v, load_checkpoint(it->second));
    if (pretrained.at(v).kind != "cpc") throw ConfigError("checkpoint for variant '" + v + "' is not a CPC checkpoint");
  }

  // The baseline uses the same trunk architecture as the pretrained variants.
  EncoderConfig base_encoder = config.classifier.encoder;
  if (!pretrained.empty()) base_encoder = cpc_config_from_json(pretrained.begin()->second.config).encoder;

  SweepResult result;
  for (int size : config.sizes) {
    if (static_cast<std::size_t>(size) > store.train.size() && config.skip_oversized) {
      result.skipped_sizes.push_back(size);
      continue;
    }
    for (const auto& v : config.variants) {
      for (auto seed : config.seeds) {
        ClassifierConfig cc = config.classifier;
        cc.encoder = base_encoder;
        std::unique_ptr<ParamSet> trunk;
        if (v != "none") {
          const auto& ckpt = pretrained.at(v);
          cc.encoder = cpc_config_from_json(ckpt.config).encoder;
          trunk = std::make_unique<ParamSet>(checkpoint_params(ckpt));
        }
        Classifier clf(cc, derive_seed(seed, 0xC1A5, static_cast<std::uint64_t>(size)));
        if (trunk) clf.load_encoder(*trunk);
        TrainConfig tc = config.finetune;
        tc.phase = Phase::finetune;
        tc.seed = seed;
        tc.subset_size = size;
        const auto ids = sample_label_subset(store, size, derive_seed(seed, 0x5B5E7, static_cast<std::uint64_t>(size)));
        MetricsLog log;
        const FinetuneResult fr = finetune_classifier(clf, store, ids, tc, log);
        SweepRow row{v, size, seed, fr.test_accuracy};
        result.rows.push_back(row);
        if (progress) progress(row);
      }
    }
  }
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "variant,subset_size,seed,test_accuracy\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.subset_size << ',' << r.seed << ',' << format_real(r.test_accuracy) << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read sweep file " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  if (line != "variant,subset_size,seed,test_accuracy") {
    throw FormatError(path.string() + ": unexpected sweep header '" + line + "'");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& s : f) std::getline(ss, s, ',');
    try {
      rows.push_back({f[0], std::stoi(f[1]), std::stoull(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed sweep row '" + line + "'");
    }
  }
  return rows;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SweepSummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "variant,subset_size,runs,mean,std\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.subset_size << ',' << r.runs << ',' << format_real(r.mean) << ','
        << format_real(r.stddev) << '\n';
  }
}

}  // namespace mdcpc
