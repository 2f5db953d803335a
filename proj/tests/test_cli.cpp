#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "samsa/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " SAMSA_CLI " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("samsa_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// A seq-select run small enough for a unit test.
std::string tiny(const fs::path& out) {
  return "--task seq-select --n 16 --k 4 --heads 2 --d-model 16 --depth 1 --steps 12 --batch 4"
         " --set task.n_train=64 --set task.n_val=32 --set task.n_test=32 --set train.warmup=2"
         " --set train.eval_every=6 --set model.d_ffn=32 --out " +
         out.string();
}

TEST(Cli, OracleAgreesOnEveryTrial) {
  const auto r = cli("oracle --n-max 12 --k-max 6 --trials 500");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["agreed"], 500);
  EXPECT_EQ(j["trials"], 500);
}

TEST(Cli, GradcheckSoftSampler) {
  const auto r = cli("gradcheck --target sampler-soft --n 16 --k 4");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_LT(j["sampler-soft"]["max_rel_err"].get<double>(), 1e-4);
}

TEST(Cli, GradcheckRejects32Bit) { EXPECT_EQ(cli("gradcheck --precision 32").code, 2); }

TEST(Cli, InvalidConfigKeyExitsWithTwo) {
  EXPECT_EQ(cli("train --set model.not_a_key=1").code, 2);
  EXPECT_EQ(cli("train --lr fast").code, 2);
  EXPECT_EQ(cli("train --steps 10", "SAMSA_TRAIN_WARMUP=50").code, 2);
  EXPECT_EQ(cli("no-such-command").code, 2);
}

TEST(Cli, HelpListsEveryConfigKey) {
  const auto r = cli("train --help");
  EXPECT_EQ(r.code, 0);
  for (const char* key : {"task.kind", "model.k", "train.lr", "train.length_warmup", "run.precision"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
}

TEST(Cli, TrainIsDeterministicAndEchoRoundTrips) {
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  ASSERT_EQ(cli("train " + tiny(a) + " --mode hard --seed 7").code, 0);
  ASSERT_EQ(cli("train " + tiny(b) + " --mode hard --seed 7").code, 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  for (const char* f : {"config.ini", "metrics.csv", "checkpoint.bin", "checkpoint_init.bin"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  // Re-running from the echoed config reproduces the run.
  ASSERT_EQ(cli("train --config " + (a / "config.ini").string() + " --out " + c.string()).code, 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(c / "summary.json"));
}

TEST(Cli, ZeroLearningRateKeepsInitialParameters) {
  const auto out = scratch("lr0");
  ASSERT_EQ(cli("train " + tiny(out) + " --lr 0").code, 0);
  const auto init = samsa::load_checkpoint(out / "checkpoint_init.bin");
  const auto final = samsa::load_checkpoint(out / "checkpoint.bin");
  ASSERT_EQ(init.order, final.order);
  for (const auto& name : init.order) EXPECT_EQ(init.tensors.at(name).values, final.tensors.at(name).values) << name;
}

TEST(Cli, EnvironmentOverridesFileAndFlagsOverrideEnvironment) {
  const auto out = scratch("env");
  fs::create_directories(out);
  std::ofstream(out / "run.ini") << "[train]\nsteps = 20\n";
  const std::string base = tiny(out) + " --config " + (out / "run.ini").string();
  ASSERT_EQ(cli("train " + base, "SAMSA_TRAIN_STEPS=5").code, 0);
  EXPECT_EQ(json::parse(slurp(out / "summary.json"))["result"]["steps_run"], 12);
  const std::string no_flag = base.substr(0, base.find(" --steps")) + base.substr(base.find(" --batch"));
  ASSERT_EQ(cli("train " + no_flag, "SAMSA_TRAIN_STEPS=5").code, 0);
  EXPECT_EQ(json::parse(slurp(out / "summary.json"))["result"]["steps_run"], 5);
  ASSERT_EQ(cli("train " + no_flag).code, 0);
  EXPECT_EQ(json::parse(slurp(out / "summary.json"))["result"]["steps_run"], 20);
}

TEST(Cli, DivergenceExitsWithThree) {
  const auto out = scratch("diverge");
  EXPECT_EQ(cli("train " + tiny(out) + " --lr 1e300 --set train.clip_norm=1e300").code, 3);
  EXPECT_TRUE(json::parse(slurp(out / "summary.json")).contains("error"));
}

TEST(Cli, EvalReproducesValidationMetricAndInspectReadsCheckpoint) {
  const auto out = scratch("eval");
  ASSERT_EQ(cli("train " + tiny(out) + " --seed 3").code, 0);
  const auto summary = json::parse(slurp(out / "summary.json"));
  const auto r = cli("eval --checkpoint " + (out / "checkpoint.bin").string() + " --split val");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["acc"], summary["val_acc"]);
  const auto ins = cli("inspect-checkpoint " + (out / "checkpoint.bin").string());
  ASSERT_EQ(ins.code, 0);
  const auto j = json::parse(ins.out);
  EXPECT_EQ(j["header"]["dtype"], "f32");
  EXPECT_TRUE(j["tensors"].contains("alpha"));
  EXPECT_EQ(cli("inspect-checkpoint " + (out / "missing.bin").string()).code, 2);
}

TEST(Cli, BenchReportsRatiosAndFailsUnmetThreshold) {
  const auto r = cli("bench --n 256 --k 16 --compare full --modes hard,soft --repeats 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["rows"].size(), 3u);
  EXPECT_TRUE(j["speed_ratio"]["full_over_hard"].contains("256"));
  EXPECT_TRUE(j["soft_over_hard"].contains("256"));
  EXPECT_EQ(cli("bench --n 256 --k 16 --compare full --repeats 1 --min-ratio 1e9").code, 4);
}

TEST(CliRecipe, DefaultSeqSelectReachesTarget) {
  const auto out = scratch("recipe");
  const auto r = cli("train --out " + out.string());
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(slurp(out / "summary.json"));
  EXPECT_GE(j["val_acc"].get<double>(), 0.95) << j.dump();
}

}  // namespace
