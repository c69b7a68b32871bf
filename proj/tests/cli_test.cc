// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "spkv/backend.h"
#include "spkv/cli.h"
#include "spkv/corpus.h"
#include "spkv/scoring.h"

namespace spkv {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result Invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "spkv");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("spkv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string Dir() const { return dir_.string(); }

  fs::path dir_;
};

const std::string kFixture = std::string(SPKV_FIXTURE_DIR) + "/scores_small.txt";

TEST_F(CliTest, NoArgumentsIsUsage) {
  const auto r = Invoke({});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("synth"), std::string::npos);
}

TEST_F(CliTest, UnknownSubcommandOrFlagIsUsage) {
  EXPECT_EQ(Invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"-w", Dir(), "evaluate", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"-w", Dir(), "train", "--stage", "3"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"-w", Dir(), "train"}).code, kExitUsage);
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(Invoke({"--help"}).code, kExitOk); }

TEST_F(CliTest, EvaluateFixtureMatchesOracle) {
  const auto r = Invoke({"-w", Dir(), "evaluate", "--scores", kFixture});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("scores_small.eer=0.25\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("scores_small.min_dcf=0.75\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("scores_small.act_dcf=7\n"), std::string::npos) << r.out;
  EXPECT_EQ(Slurp(dir_ / "reports/report.txt"), r.out);
  EXPECT_TRUE(fs::exists(dir_ / "resolved.cfg"));
}

TEST_F(CliTest, ResolvedConfigReflectsOverrides) {
  const auto r = Invoke({"-w", Dir(), "--set", "dcf.priors=0.05", "--workers", "2", "evaluate", "--scores", kFixture});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string cfg = Slurp(dir_ / "resolved.cfg");
  EXPECT_NE(cfg.find("dcf.priors = 0.05"), std::string::npos) << cfg;
  EXPECT_NE(cfg.find("workers = 2"), std::string::npos);
  EXPECT_NE(r.out.find("priors=0.05\n"), std::string::npos);
}

TEST_F(CliTest, StageTwoWithoutCheckpointNamesPath) {
  const auto r = Invoke({"-w", Dir(), "train", "--stage", "2"});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find((dir_ / "ckpt/stage1_best.ckpt").string()), std::string::npos)
      << r.err;
}

TEST_F(CliTest, ConfigErrorIsLineAnchored) {
  const std::string cfg = (dir_ / "run.cfg").string();
  std::ofstream(cfg) << "# comment\nworkers = 1\nmodel.depth = 9\n";
  const auto r = Invoke({"-c", cfg, "-w", Dir(), "evaluate", "--scores", kFixture});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find(cfg + ":3: unknown key 'model.depth'"), std::string::npos) << r.err;
  EXPECT_EQ(Invoke({"-w", Dir(), "--set", "synth.utts=1", "synth"}).code, kExitFailure);
}

TEST_F(CliTest, MissingInputsAreRuntimeFailures) {
  EXPECT_EQ(Invoke({"-w", Dir(), "evaluate"}).code, kExitFailure);
  EXPECT_EQ(Invoke({"-w", Dir(), "score"}).code, kExitFailure);
  EXPECT_EQ(Invoke({"-w", Dir(), "extract"}).code, kExitFailure);
  EXPECT_EQ(Invoke({"-w", Dir(), "augment"}).code, kExitFailure);
}

TEST_F(CliTest, CalibrateAndFuseFixture) {
  auto r = Invoke({"-w", Dir(), "calibrate", "--dev", kFixture, "--out", "scores/cal.txt"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const CalibrationModel m = ReadCalibration((dir_ / "reports/calibration.json").string());
  EXPECT_GT(m.a, 0.0);
  EXPECT_EQ(ReadScores((dir_ / "scores/cal.txt").string()).size(), 16u);
  r = Invoke({"-w", Dir(), "fuse", "--in", kFixture, "--in", kFixture, "--out", "scores/f.txt"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const ScoreSet a = ReadScores(kFixture), f = ReadScores((dir_ / "scores/f.txt").string());
  ASSERT_EQ(f.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(f.scores[i], a.scores[i]);
}

// Every subcommand on a corpus small enough to train in seconds.
TEST_F(CliTest, TinyPipeline) {
  const std::vector<std::string> common = {
      "-w", Dir(),
      "--set", "synth.speakers=4", "--set", "synth.utts=4", "--set", "synth.duration=1.2",
      "--set", "synth.domain_b_speakers=2", "--set", "synth.eval_speakers=3", "--set", "synth.eval_utts=4",
      "--set", "synth.eval_enroll=2", "--set", "synth.trials_target=6", "--set", "synth.trials_nontarget=6",
      "--set", "synth.valid_fraction=0.25",
      "--set", "model.arch=repvgg", "--set", "model.repvgg.base=4", "--set", "model.repvgg.depths=1,1,1,1,1",
      "--set", "model.repvgg.embedding_dim=8", "--set", "model.precision=double",
      "--set", "train.stage1.max_iters=4", "--set", "train.stage1.batch_size=4", "--set", "train.stage1.chunk_frames=48",
      "--set", "train.stage1.validate_every=2",
      "--set", "train.stage2.max_iters=2", "--set", "train.stage2.batch_size=4", "--set", "train.stage2.chunk_frames=48",
      "--set", "train.stage2.validate_every=1"};
  auto run = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = Invoke(args);
    EXPECT_EQ(r.code, kExitOk) << extra[0] << ": " << r.err;
    return r;
  };
  run({"synth"});
  for (const char* f : {"stage1.tsv", "stage2.tsv", "enroll.tsv", "test.tsv", "trials.txt"})
    EXPECT_TRUE(fs::exists(dir_ / "manifests" / f)) << f;
  EXPECT_EQ(ReadManifest((dir_ / "manifests/stage1.tsv").string()).size(), 16u);
  EXPECT_EQ(ManifestSpeakers(ReadManifest((dir_ / "manifests/stage2.tsv").string())).size(), 2u);

  run({"augment", "--in", "manifests/stage2.tsv"});
  EXPECT_EQ(ReadManifest((dir_ / "manifests/stage2_aug.tsv").string()).size(), 16u);
  std::istringstream log(Slurp(dir_ / "reports/augment.log"));
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) EXPECT_EQ(std::count(line.begin(), line.end(), ' '), 2);
  EXPECT_EQ(lines, 8);

  auto r = run({"train", "--stage", "1"});
  EXPECT_NE(r.out.find("iter="), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "ckpt/stage1_best.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "reports/train_stage1.log"));
  run({"train", "--stage", "2"});
  EXPECT_TRUE(fs::exists(dir_ / "ckpt/stage2_best.ckpt"));
  run({"reparam"});
  run({"extract", "--checkpoint", "ckpt/stage2_fused.ckpt"});
  run({"score"});
  const ScoreSet s = ReadScores((dir_ / "scores/system.txt").string());
  EXPECT_EQ(s.size(), 12u);
  r = run({"evaluate"});
  EXPECT_NE(r.out.find("system.eer="), std::string::npos);
}

}  // namespace
}  // namespace spkv
