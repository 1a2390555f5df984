#include "mdcpc/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "mdcpc/causality.hpp"
#include "mdcpc/error.hpp"
#include "mdcpc/plot.hpp"
#include "mdcpc/sweep.hpp"
#include "mdcpc/training.hpp"

namespace mdcpc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot hash " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ModelOptions {
  std::string encoder = "toy_cnn";
  int latent_dim = 128;
  int patch = 24;
  int stride = 12;
  int toy_width = 32;
  int depth = kDefaultStackDepth;
  int context_rows = kDefaultContextRows;
  bool share_branches = false;
  std::string normalization = "layer_norm";
};

void add_model_options(CLI::App* sub, ModelOptions& m) {
  sub->add_option("--encoder", m.encoder, "Encoder family")->check(CLI::IsMember({"toy_cnn", "resnext101"}));
  sub->add_option("--latent-dim", m.latent_dim, "Latent channels D")->check(CLI::PositiveNumber);
  sub->add_option("--patch", m.patch, "Patch side in pixels")->check(CLI::PositiveNumber);
  sub->add_option("--stride", m.stride, "Patch stride in pixels")->check(CLI::PositiveNumber);
  sub->add_option("--toy-width", m.toy_width, "Base width of the toy encoder")->check(CLI::PositiveNumber);
  sub->add_option("--depth", m.depth, "Masked blocks in the autoregressor")->check(CLI::PositiveNumber);
  sub->add_option("--context-rows", m.context_rows, "Context rows of the top-down mask")->check(CLI::PositiveNumber);
  sub->add_flag("--share-branches", m.share_branches, "Share weights across the four rotated branches");
  sub->add_option("--normalization", m.normalization, "Encoder normalization")
      ->check(CLI::IsMember({"layer_norm", "none"}));
}

EncoderConfig encoder_config(const ModelOptions& m) {
  EncoderConfig e;
  e.family = parse_encoder_family(m.encoder);
  e.latent_dim = m.latent_dim;
  e.patch_size = m.patch;
  e.toy_width = m.toy_width;
  e.normalization = parse_normalization(m.normalization);
  return e;
}

CpcConfig cpc_config(const ModelOptions& m, const std::string& mask, const std::string& directional, int negatives,
                     int image_size) {
  CpcConfig c;
  c.encoder = encoder_config(m);
  c.autoregressor.directional = parse_directional(directional);
  c.autoregressor.channels = m.latent_dim;
  c.autoregressor.depth = m.depth;
  c.autoregressor.share_branch_weights = m.share_branches;
  c.mask_kind = parse_mask_kind(mask);
  c.context_rows = m.context_rows;
  c.image_size = image_size;
  c.stride = m.stride;
  c.negatives = negatives;
  c.validate();
  return c;
}

struct TrainOptions {
  double lr = 1e-4;
  int epochs = 0;
  int batch = 0;
  int patience = 5;
  bool no_augment = false;
  int max_train_batches = 0;
  int max_valid = 0;
};

void add_train_options(CLI::App* sub, TrainOptions& t) {
  sub->add_option("--lr", t.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", t.batch, "Batch size")->check(CLI::PositiveNumber);
  sub->add_option("--patience", t.patience, "Early-stopping patience in epochs")->check(CLI::PositiveNumber);
  sub->add_flag("--no-augment", t.no_augment, "Disable rotation/flip augmentation");
  sub->add_option("--max-train-batches", t.max_train_batches, "Cap on batches per epoch (0: none)");
  sub->add_option("--max-valid", t.max_valid, "Cap on validation images (0: none)");
}

TrainConfig train_config(TrainConfig base, const TrainOptions& t, std::uint64_t seed) {
  base.learning_rate = t.lr;
  base.epochs = t.epochs;
  base.batch_size = t.batch;
  base.patience = t.patience;
  base.augment = !t.no_augment;
  base.max_train_batches = t.max_train_batches;
  base.max_valid_images = t.max_valid;
  base.seed = seed;
  base.validate();
  return base;
}

DatasetStore load_with_valid(const fs::path& dir, std::uint64_t seed, double fraction, std::ostream& log) {
  DatasetStore store = load_dataset(dir);
  if (store.valid.empty()) {
    log << "no validation split in " << dir << "; holding out " << fraction << " of train\n";
    store = split_train_val(store, fraction, derive_seed(seed, 0xF01D));
  }
  return store;
}

// Refuses to reuse a non-empty directory unless forced.
void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

json option_values(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto res = opt->reduced_results();
      j[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

struct Manifest {
  json doc;
  std::vector<fs::path> outputs;
};

void write_manifest(const fs::path& run_root, Manifest& m) {
  json hashes = json::object();
  for (const auto& p : m.outputs) {
    if (fs::is_regular_file(p)) hashes[p.string()] = sha256_file(p.string());
  }
  m.doc["artifacts"] = hashes;
  fs::create_directories(run_root);
  std::ofstream out(run_root / "manifests.jsonl", std::ios::app);
  if (out) out << m.doc.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-directional contrastive predictive coding for image patches"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);

  std::string run_root_flag;
  bool quiet = false;
  app.add_option("--run-root", run_root_flag, std::string("Run directory root (default: $") + kRunRootEnv + " or ./runs)");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  // synth
  int synth_n = 0, synth_size = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  bool synth_force = false;
  auto* synth = app.add_subcommand("synth", "Generate the two-class synthetic texture dataset");
  synth->add_option("--n", synth_n, "Images per class")->required()->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side in pixels")->check(CLI::Range(16, 4096));
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_flag("--force", synth_force, "Overwrite a non-empty output directory");

  // pretrain
  std::string pre_data, pre_out, pre_mask = "infill", pre_dir = "multi";
  int pre_negatives = kDefaultNegatives;
  std::uint64_t pre_seed = 0;
  double pre_valid_fraction = 0.2;
  bool pre_force = false;
  ModelOptions pre_model;
  TrainOptions pre_train;
  pre_train.epochs = 20;
  pre_train.batch = 16;
  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised CPC pretraining");
  pretrain->add_option("--data", pre_data, "Dataset directory (PCam HDF5 files or PNG manifest)")->required();
  pretrain->add_option("--mask", pre_mask, "Latent mask")->check(CLI::IsMember({"top_down", "infill"}));
  pretrain->add_option("--directional", pre_dir, "Autoregressor kind")->check(CLI::IsMember({"single", "multi"}));
  pretrain->add_option("--negatives", pre_negatives, "Negatives per prediction")->check(CLI::PositiveNumber);
  pretrain->add_option("--seed", pre_seed, "Run seed");
  pretrain->add_option("--valid-fraction", pre_valid_fraction, "Held-out fraction when the data has no valid split");
  pretrain->add_option("--out", pre_out, "Run directory");
  pretrain->add_flag("--force", pre_force, "Overwrite a non-empty run directory");
  add_model_options(pretrain, pre_model);
  add_train_options(pretrain, pre_train);

  // finetune
  std::string ft_data, ft_out, ft_init = "random";
  int ft_subset = 0, ft_hidden = 256;
  std::uint64_t ft_seed = 0;
  double ft_valid_fraction = 0.2;
  bool ft_force = false;
  ModelOptions ft_model;
  TrainOptions ft_train;
  ft_train.epochs = 50;
  ft_train.batch = 64;
  auto* finetune = app.add_subcommand("finetune", "Train the patch classifier on labelled data");
  finetune->add_option("--data", ft_data, "Dataset directory")->required();
  finetune->add_option("--init", ft_init, "random, or a CPC checkpoint whose encoder initializes the trunk");
  finetune->add_option("--subset", ft_subset, "Stratified number of labelled training samples (0: all)")
      ->check(CLI::NonNegativeNumber);
  finetune->add_option("--hidden", ft_hidden, "Hidden layer width")->check(CLI::PositiveNumber);
  finetune->add_option("--seed", ft_seed, "Run seed");
  finetune->add_option("--valid-fraction", ft_valid_fraction, "Held-out fraction when the data has no valid split");
  finetune->add_option("--out", ft_out, "Run directory");
  finetune->add_flag("--force", ft_force, "Overwrite a non-empty run directory");
  add_model_options(finetune, ft_model);
  add_train_options(finetune, ft_train);

  // evaluate
  std::string ev_ckpt, ev_data, ev_split = "test";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Accuracy of a classifier checkpoint on one split");
  evaluate_cmd->add_option("--checkpoint", ev_ckpt, "Classifier checkpoint")->required();
  evaluate_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  evaluate_cmd->add_option("--split", ev_split, "Split")->check(CLI::IsMember({"train", "valid", "test"}));

  // sweep
  std::string sw_data, sw_out;
  std::vector<std::string> sw_variants = kSweepVariants, sw_ckpts;
  std::vector<int> sw_sizes = kSweepSizes;
  std::vector<std::uint64_t> sw_seeds = {1, 2, 3, 4, 5};
  int sw_hidden = 256;
  bool sw_force = false;
  ModelOptions sw_model;
  TrainOptions sw_train;
  sw_train.epochs = 50;
  sw_train.batch = 64;
  auto* sweep = app.add_subcommand("sweep", "Label-efficiency sweep over pretraining variants");
  sweep->add_option("--data", sw_data, "Dataset directory")->required();
  sweep->add_option("--variants", sw_variants, "Variants to run")->delimiter(',')->check(CLI::IsMember(kSweepVariants));
  sweep->add_option("--checkpoint", sw_ckpts, "variant=path of a CPC checkpoint (repeatable)");
  sweep->add_option("--sizes", sw_sizes, "Labelled subset sizes")->delimiter(',')->check(CLI::PositiveNumber);
  sweep->add_option("--seeds", sw_seeds, "Seeds")->delimiter(',');
  sweep->add_option("--hidden", sw_hidden, "Hidden layer width")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sw_out, "Run directory");
  sweep->add_flag("--force", sw_force, "Overwrite a non-empty run directory");
  add_model_options(sweep, sw_model);
  add_train_options(sweep, sw_train);

  // plot
  std::vector<std::string> pl_metrics;
  std::string pl_sweep, pl_out;
  auto* plot = app.add_subcommand("plot", "Render loss curves and accuracy-vs-size plots as SVG");
  plot->add_option("--metrics", pl_metrics, "[label=]metrics.csv of a pretraining run (repeatable)");
  plot->add_option("--sweep", pl_sweep, "Sweep CSV (variant,subset_size,seed,test_accuracy)");
  plot->add_option("--out", pl_out, "Output directory");

  // leakcheck
  std::string lc_mask = "infill", lc_dir = "multi", lc_fixture = "none";
  int lc_trials = 20, lc_grid = 7, lc_dim = 16, lc_depth = kDefaultStackDepth, lc_rows = kDefaultContextRows;
  std::uint64_t lc_seed = 0;
  auto* leak = app.add_subcommand("leakcheck", "Causality and target-leakage checks on a random model");
  leak->add_option("--mask", lc_mask, "Latent mask")->check(CLI::IsMember({"top_down", "infill"}));
  leak->add_option("--directional", lc_dir, "Autoregressor kind")->check(CLI::IsMember({"single", "multi"}));
  leak->add_option("--fixture", lc_fixture, "Deliberately broken configuration")
      ->check(CLI::IsMember({"none", "mask_b_everywhere"}));
  leak->add_option("--trials", lc_trials, "Random trials per check")->check(CLI::PositiveNumber);
  leak->add_option("--grid", lc_grid, "Latent grid side")->check(CLI::Range(3, 64));
  leak->add_option("--latent-dim", lc_dim, "Latent channels")->check(CLI::PositiveNumber);
  leak->add_option("--depth", lc_depth, "Masked blocks")->check(CLI::PositiveNumber);
  leak->add_option("--context-rows", lc_rows, "Context rows of the top-down mask")->check(CLI::PositiveNumber);
  leak->add_option("--seed", lc_seed, "Seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostream& stream = e.get_exit_code() == 0 ? out : err;
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      stream << app.help();
    } else if (e.get_exit_code() != 0) {
      err << "error: " << e.what() << "\n";
    } else {
      stream << e.what() << "\n";
    }
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  const char* env_root = std::getenv(kRunRootEnv);
  const fs::path run_root = !run_root_flag.empty() ? fs::path(run_root_flag)
                            : (env_root && *env_root) ? fs::path(env_root)
                                                      : fs::path("runs");
  CLI::App* cmd = app.get_subcommands().front();
  std::ostringstream discard;
  std::ostream& log = quiet ? static_cast<std::ostream&>(discard) : err;
  const ProgressFn progress = [&log](const std::string& line) { log << line << '\n' << std::flush; };

  Manifest manifest;
  manifest.doc = {{"command", cmd->get_name()},
                  {"argv", args},
                  {"config", option_values(cmd)},
                  {"run_root", run_root.string()},
                  {"started", utc_now()}};
  auto default_dir = [&](const std::string& name) { return run_root / cmd->get_name() / name; };

  int code = kExitOk;
  try {
    if (cmd == synth) {
      const fs::path dir = synth_out.empty() ? default_dir("seed" + std::to_string(synth_seed)) : fs::path(synth_out);
      manifest.doc["seed"] = synth_seed;
      manifest.doc["outputs"] = {dir.string()};
      prepare_dir(dir, synth_force);
      const DatasetStore store = generate_synthetic(synth_n, synth_size, synth_seed);
      export_png_dataset(store, dir);
      manifest.outputs.push_back(dir / "manifest.csv");
      out << "wrote " << store.total() << " images to " << dir.string() << "\n";
    } else if (cmd == pretrain) {
      const fs::path dir =
          pre_out.empty() ? default_dir(pre_dir + "_" + pre_mask + "_seed" + std::to_string(pre_seed)) : fs::path(pre_out);
      manifest.doc["seed"] = pre_seed;
      manifest.doc["inputs"] = {pre_data};
      manifest.doc["outputs"] = {dir.string()};
      const DatasetStore store = load_with_valid(pre_data, pre_seed, pre_valid_fraction, log);
      const CpcConfig cc = cpc_config(pre_model, pre_mask, pre_dir, pre_negatives, store.metadata.image_size);
      const TrainConfig tc = train_config(pretrain_defaults(), pre_train, pre_seed);
      prepare_dir(dir, pre_force);
      manifest.doc["model"] = to_json(cc);
      manifest.doc["train"] = to_json(tc);
      CpcModel model(cc, pre_seed);
      MetricsLog metrics(dir / "metrics.csv");
      manifest.outputs.push_back(dir / "metrics.csv");
      manifest.outputs.push_back(dir / "checkpoint.ckpt");
      try {
        const PretrainResult r = pretrain_cpc(model, store, tc, metrics, progress);
        Checkpoint ck = cpc_checkpoint(model, tc, metrics);
        ck.metrics["best_epoch"] = r.best_epoch;
        ck.metrics["best_valid_loss"] = r.best_valid_loss;
        ck.metrics["initial_valid_loss"] = r.initial_valid_loss;
        save_checkpoint(dir / "checkpoint.ckpt", ck);
        out << "best validation InfoNCE " << format_real(r.best_valid_loss) << " at epoch " << r.best_epoch
            << " (epoch 0: " << format_real(r.initial_valid_loss) << ")\n";
        out << "checkpoint " << (dir / "checkpoint.ckpt").string() << "\n";
      } catch (const NumericError&) {
        Checkpoint ck = cpc_checkpoint(model, tc, metrics);
        ck.metrics["diverged"] = true;
        save_checkpoint(dir / "checkpoint.ckpt", ck);
        throw;
      }
    } else if (cmd == finetune) {
      const fs::path dir = ft_out.empty() ? default_dir("seed" + std::to_string(ft_seed)) : fs::path(ft_out);
      manifest.doc["seed"] = ft_seed;
      manifest.doc["inputs"] = {ft_data};
      manifest.doc["outputs"] = {dir.string()};
      const DatasetStore store = load_with_valid(ft_data, ft_seed, ft_valid_fraction, log);
      TrainConfig tc = train_config(finetune_defaults(), ft_train, ft_seed);
      ClassifierConfig clf_cfg;
      clf_cfg.hidden = ft_hidden;
      clf_cfg.encoder = encoder_config(ft_model);
      std::unique_ptr<ParamSet> trunk;
      if (ft_init != "random") {
        manifest.doc["inputs"].push_back(ft_init);
        const Checkpoint ck = load_checkpoint(ft_init);
        if (ck.kind != "cpc") throw ConfigError(ft_init + " is not a CPC checkpoint");
        clf_cfg.encoder = cpc_config_from_json(ck.config).encoder;
        trunk = std::make_unique<ParamSet>(checkpoint_params(ck));
      }
      std::vector<std::string> ids;
      if (ft_subset > 0) {
        tc.subset_size = ft_subset;
        ids = sample_label_subset(store, ft_subset, derive_seed(ft_seed, 0x5B5E7, static_cast<std::uint64_t>(ft_subset)));
      }
      prepare_dir(dir, ft_force);
      manifest.doc["train"] = to_json(tc);
      Classifier clf(clf_cfg, ft_seed);
      if (trunk) clf.load_encoder(*trunk);
      MetricsLog metrics(dir / "metrics.csv");
      manifest.outputs.push_back(dir / "metrics.csv");
      const FinetuneResult r = finetune_classifier(clf, store, ids, tc, metrics, progress);
      Checkpoint ck = classifier_checkpoint(clf, tc, metrics);
      ck.metrics["best_epoch"] = r.best_epoch;
      ck.metrics["best_valid_accuracy"] = r.best_valid_accuracy;
      ck.metrics["test_accuracy"] = r.test_accuracy;
      ck.extra["init"] = ft_init;
      ck.extra["subset_ids"] = ids;
      save_checkpoint(dir / "classifier.ckpt", ck);
      manifest.outputs.push_back(dir / "classifier.ckpt");
      out << "best validation accuracy " << format_real(r.best_valid_accuracy) << " at epoch " << r.best_epoch
          << "\ntest accuracy " << format_real(r.test_accuracy) << "\n";
    } else if (cmd == evaluate_cmd) {
      manifest.doc["inputs"] = {ev_ckpt, ev_data};
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const auto clf = classifier_from_checkpoint(ck);
      const DatasetStore store = load_dataset(ev_data);
      const Evaluation e = evaluate(*clf, store.split(ev_split));
      manifest.doc["result"] = {{"split", ev_split}, {"accuracy", e.accuracy}, {"count", e.count}};
      out << ev_split << " accuracy " << format_real(e.accuracy) << " over " << e.count << " samples\n";
    } else if (cmd == sweep) {
      const fs::path dir = sw_out.empty() ? default_dir("latest") : fs::path(sw_out);
      manifest.doc["inputs"] = {sw_data};
      manifest.doc["outputs"] = {dir.string()};
      SweepConfig sc;
      sc.variants = sw_variants;
      sc.sizes = sw_sizes;
      sc.seeds = sw_seeds;
      sc.classifier.hidden = sw_hidden;
      sc.classifier.encoder = encoder_config(sw_model);
      sc.finetune = train_config(finetune_defaults(), sw_train, 0);
      for (const auto& entry : sw_ckpts) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw ConfigError("--checkpoint expects variant=path, got '" + entry + "'");
        const std::string variant = entry.substr(0, eq);
        if (!is_sweep_variant(variant)) throw ConfigError("unknown sweep variant '" + variant + "'");
        sc.checkpoints[variant] = entry.substr(eq + 1);
        manifest.doc["inputs"].push_back(entry.substr(eq + 1));
      }
      const DatasetStore store = load_with_valid(sw_data, 0, 0.2, log);
      prepare_dir(dir, sw_force);
      const SweepResult r = run_sweep(store, sc, [&](const SweepRow& row) {
        log << row.variant << " size " << row.subset_size << " seed " << row.seed << " test accuracy "
            << format_real(row.test_accuracy) << '\n'
            << std::flush;
      });
      for (int s : r.skipped_sizes) {
        log << "skipped subset size " << s << ": larger than the " << store.train.size() << "-sample training split\n";
      }
      write_sweep_csv(dir / "sweep.csv", r.rows);
      write_summary_csv(dir / "summary.csv", r.summary());
      manifest.outputs.push_back(dir / "sweep.csv");
      manifest.outputs.push_back(dir / "summary.csv");
      manifest.doc["skipped_sizes"] = r.skipped_sizes;
      out << "wrote " << (dir / "sweep.csv").string() << " and " << (dir / "summary.csv").string() << "\n";
    } else if (cmd == plot) {
      if (pl_metrics.empty() && pl_sweep.empty()) throw ConfigError("plot needs --metrics and/or --sweep");
      const fs::path dir = pl_out.empty() ? default_dir("latest") : fs::path(pl_out);
      manifest.doc["outputs"] = {dir.string()};
      PlotSpec losses, accuracy;
      std::vector<SweepSummaryRow> summary;
      if (!pl_metrics.empty()) {
        std::vector<std::pair<std::string, std::vector<MetricRow>>> runs;
        for (const auto& entry : pl_metrics) {
          const auto eq = entry.find('=');
          const fs::path path = eq == std::string::npos ? entry : entry.substr(eq + 1);
          const std::string label = eq == std::string::npos ? path.parent_path().filename().string() : entry.substr(0, eq);
          manifest.doc["inputs"].push_back(path.string());
          runs.emplace_back(label, MetricsLog::read_csv(path));
        }
        losses = loss_curve_plot(runs);
        if (losses.series.empty()) throw FormatError("no validation InfoNCE rows in the metrics files");
      }
      if (!pl_sweep.empty()) {
        manifest.doc["inputs"].push_back(pl_sweep);
        summary = summarize(read_sweep_csv(pl_sweep));
        if (summary.empty()) throw FormatError(pl_sweep + " holds no sweep rows");
        accuracy = accuracy_plot(summary);
      }
      fs::create_directories(dir);
      if (!losses.series.empty()) {
        write_svg(dir / "loss_curves.svg", losses);
        manifest.outputs.push_back(dir / "loss_curves.svg");
        out << "wrote " << (dir / "loss_curves.svg").string() << "\n";
      }
      if (!accuracy.series.empty()) {
        write_svg(dir / "accuracy.svg", accuracy);
        write_summary_csv(dir / "accuracy.csv", summary);
        manifest.outputs.push_back(dir / "accuracy.svg");
        manifest.outputs.push_back(dir / "accuracy.csv");
        out << "wrote " << (dir / "accuracy.svg").string() << "\n";
      }
    } else if (cmd == leak) {
      manifest.doc["seed"] = lc_seed;
      ModelOptions m;
      m.latent_dim = lc_dim;
      m.depth = lc_depth;
      m.context_rows = lc_rows;
      // Any encoder geometry giving the requested grid works; causality only
      // concerns the autoregressor and head.
      m.patch = 8;
      m.stride = 4;
      m.toy_width = 2;
      CpcConfig cc = cpc_config(m, lc_mask, lc_dir, kDefaultNegatives, 8 + 4 * (lc_grid - 1));
      if (lc_fixture == "mask_b_everywhere") cc.autoregressor.mask_pattern.assign(static_cast<std::size_t>(lc_depth), MaskType::B);
      manifest.doc["model"] = to_json(cc);
      const CpcModel model(cc, lc_seed);
      const auto reports = run_leakcheck(model, lc_trials, lc_seed);
      bool all = true;
      json results = json::array();
      for (const auto& r : reports) {
        out << r.detail << "\n";
        all = all && r.passed;
        results.push_back({{"name", r.name}, {"passed", r.passed}, {"max_delta", r.max_delta},
                           {"max_gradient", r.max_gradient}, {"violations", r.violations}});
      }
      out << (all ? "PASS" : "FAIL") << "\n";
      manifest.doc["result"] = results;
      if (!all) code = kExitNumeric;
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    code = kExitNumeric;
  } catch (const IngestionError& e) {
    err << "data error: " << e.what() << "\n";
    code = kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    code = kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    code = kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    code = kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << "\n";
    code = kExitData;
  }
  manifest.doc["finished"] = utc_now();
  manifest.doc["exit_code"] = code;
  try {
    write_manifest(run_root, manifest);
  } catch (const std::exception& e) {
    err << "warning: could not write run manifest: " << e.what() << "\n";
  }
  return code;
}

}  // namespace mdcpc
