#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mdcpc/cli.hpp"
#include "test_util.hpp"

using namespace mdcpc;
using tu::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<nlohmann::json> manifests(const fs::path& root) {
  std::vector<nlohmann::json> out;
  std::ifstream in(root / "manifests.jsonl");
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

std::map<std::string, std::string> checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path().string());
  return out;
}

}  // namespace

TEST(Cli, SynthCountsAndDeterministicChecksums) {
  TempDir dir;
  const std::string root = (dir / "runs").string();
  const CliRun a = cli({"--run-root", root, "synth", "--n", "100", "--size", "32", "--seed", "7", "--out", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("wrote 200 images"), std::string::npos);
  std::size_t pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 200u);
  ASSERT_EQ(cli({"--run-root", root, "synth", "--n", "100", "--size", "32", "--seed", "7", "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(checksums(dir / "a"), checksums(dir / "b"));
  ASSERT_EQ(cli({"--run-root", root, "synth", "--n", "100", "--size", "32", "--seed", "8", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(checksums(dir / "a"), checksums(dir / "c"));
}

TEST(Cli, UsageErrors) {
  TempDir dir;
  const std::string root = (dir / "runs").string();
  EXPECT_EQ(cli({"--run-root", root, "synth", "--size", "32"}).code, 1);
  EXPECT_EQ(cli({"--run-root", root}).code, 1);
  EXPECT_EQ(cli({"--run-root", root, "frobnicate"}).code, 1);
  EXPECT_EQ(cli({"--run-root", root, "pretrain", "--data", "x", "--mask", "diagonal"}).code, 1);
  EXPECT_EQ(cli({"--run-root", root, "sweep", "--data", "x", "--variants", "none,quadratic"}).code, 1);
  EXPECT_EQ(cli({"--run-root", root, "leakcheck", "--directional", "sideways"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, ExistingDirectoryNeedsForce) {
  TempDir dir;
  const std::string root = (dir / "runs").string(), out = (dir / "d").string();
  fs::create_directories(dir / "d");
  std::ofstream(dir / "d" / "keep.txt") << "x";
  const CliRun r = cli({"--run-root", root, "synth", "--n", "2", "--out", out});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "d" / "keep.txt"));
  EXPECT_EQ(cli({"--run-root", root, "synth", "--n", "2", "--out", out, "--force"}).code, 0);
  EXPECT_FALSE(fs::exists(dir / "d" / "keep.txt"));
}

TEST(Cli, MissingDataIsDataError) {
  TempDir dir;
  const CliRun r = cli({"--run-root", (dir / "runs").string(), "pretrain", "--data", (dir / "nowhere").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos);
}

TEST(Cli, LeakcheckDefaultsPassAndFixtureFails) {
  TempDir dir;
  const std::string root = (dir / "runs").string();
  const CliRun ok = cli({"--run-root", root, "leakcheck", "--trials", "2", "--grid", "5"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("self-position independence: PASS"), std::string::npos);
  const CliRun single = cli({"--run-root", root, "leakcheck", "--directional", "single", "--mask", "top_down",
                          "--trials", "2", "--grid", "5", "--context-rows", "2"});
  EXPECT_EQ(single.code, 0) << single.out;
  EXPECT_NE(single.out.find("row causality: PASS"), std::string::npos);
  const CliRun bad = cli({"--run-root", root, "leakcheck", "--fixture", "mask_b_everywhere", "--trials", "2", "--grid", "5"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_NE(bad.out.find("self-position leakage"), std::string::npos);
}

TEST(Cli, PlotWithEmptyCsvWritesNothing) {
  TempDir dir;
  std::ofstream(dir / "sweep.csv") << "variant,subset_size,seed,test_accuracy\n";
  const CliRun r = cli({"--run-root", (dir / "runs").string(), "plot", "--sweep", (dir / "sweep.csv").string(), "--out",
                     (dir / "plots").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "plots" / "accuracy.svg"));
}

TEST(Cli, ConfigFilePrecedence) {
  TempDir dir;
  const fs::path root = dir / "runs";
  std::ofstream(dir / "cfg.toml") << "[leakcheck]\ntrials = 1\ngrid = 4\nlatent-dim = 3\n";
  ASSERT_EQ(cli({"--config", (dir / "cfg.toml").string(), "--run-root", root.string(), "leakcheck", "--grid", "5"}).code, 0);
  const auto m = manifests(root);
  ASSERT_EQ(m.size(), 1u);
  const auto& cfg = m[0]["config"];
  EXPECT_EQ(cfg["grid"], "5");        // flag beats file
  EXPECT_EQ(cfg["trials"], "1");      // file beats default
  EXPECT_EQ(cfg["latent-dim"], "3");
  EXPECT_EQ(cfg["depth"], "6");       // default
  EXPECT_EQ(m[0]["model"]["image_size"], 8 + 4 * 4);
}

TEST(Cli, ManifestAppendedPerRunUnderEnvRoot) {
  TempDir dir;
  const fs::path root = dir / "envroot";
  ::setenv(kRunRootEnv, root.c_str(), 1);
  cli({"synth", "--n", "2", "--size", "16", "--seed", "3"});
  cli({"synth", "--size", "16"});
  ::unsetenv(kRunRootEnv);
  const auto m = manifests(root);
  ASSERT_EQ(m.size(), 1u);  // parse failures never start a run
  EXPECT_EQ(m[0]["command"], "synth");
  EXPECT_EQ(m[0]["exit_code"], 0);
  EXPECT_EQ(m[0]["seed"], 3);
  const fs::path data = root / "synth" / "seed3";
  EXPECT_TRUE(fs::exists(data / "manifest.csv"));
  EXPECT_EQ(m[0]["artifacts"][(data / "manifest.csv").string()], sha256_file((data / "manifest.csv").string()));

  cli({"--run-root", root.string(), "pretrain", "--data", (dir / "missing").string()});
  const auto m2 = manifests(root);
  ASSERT_EQ(m2.size(), 2u);
  EXPECT_EQ(m2[1]["exit_code"], 2);
}

TEST(Cli, PretrainFinetuneEvaluateEndToEnd) {
  TempDir dir;
  const std::string root = (dir / "runs").string(), data = (dir / "data").string();
  ASSERT_EQ(cli({"--run-root", root, "synth", "--n", "10", "--size", "16", "--out", data}).code, 0);
  const std::vector<std::string> model = {"--latent-dim", "4", "--patch", "8", "--stride", "4", "--toy-width", "2", "--depth", "1"};
  std::vector<std::string> pre = {"-q", "--run-root", root, "pretrain", "--data", data, "--out", (dir / "pre").string(),
                                  "--epochs", "1", "--batch", "4", "--negatives", "2"};
  pre.insert(pre.end(), model.begin(), model.end());
  const CliRun p = cli(pre);
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(dir / "pre" / "checkpoint.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "pre" / "metrics.csv"));

  std::vector<std::string> ft = {"-q", "--run-root", root, "finetune", "--data", data, "--init",
                                 (dir / "pre" / "checkpoint.ckpt").string(), "--subset", "4", "--epochs", "1",
                                 "--hidden", "4", "--out", (dir / "ft").string()};
  ft.insert(ft.end(), model.begin(), model.end());
  const CliRun f = cli(ft);
  ASSERT_EQ(f.code, 0) << f.err;
  const CliRun e = cli({"--run-root", root, "evaluate", "--checkpoint", (dir / "ft" / "classifier.ckpt").string(), "--data",
                     data, "--split", "test"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("test accuracy"), std::string::npos);
  // A CPC checkpoint is not a classifier.
  EXPECT_EQ(cli({"--run-root", root, "evaluate", "--checkpoint", (dir / "pre" / "checkpoint.ckpt").string(), "--data",
                 data}).code, 1);
}
