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

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "spkv/errors.h"
#include "spkv/trainer.h"

namespace spkv {
namespace {

constexpr int kDim = 16;

ResNetConfig Tiny() {
  ResNetConfig c;
  c.base_channels = 2;
  c.block_counts = {1, 1, 1, 1};
  c.embedding_dim = 16;
  c.feat_dim = kDim;
  return c;
}

// Each speaker has its own mean spectrum; utterances add frame noise.
TrainingCorpus ToyCorpus(int speakers, int utts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  TrainingCorpus corpus;
  for (int s = 0; s < speakers; ++s) {
    corpus.speakers.push_back("spk" + std::to_string(s));
    Eigen::RowVectorXd mean(kDim);
    for (auto& v : mean) v = 1.5 * g(rng);
    for (int u = 0; u < utts; ++u) {
      LabeledUtterance utt;
      utt.id = corpus.speakers.back() + "-" + std::to_string(u);
      utt.label = s;
      utt.feats.resize(40 + 8 * u, kDim);
      for (Index i = 0; i < utt.feats.size(); ++i) utt.feats.data()[i] = g(rng);
      utt.feats.rowwise() += mean;
      (u == 0 ? corpus.valid : corpus.train).push_back(std::move(utt));
    }
  }
  return corpus;
}

StageConfig ToyStage() {
  StageConfig cfg;
  cfg.batch_size = 8;
  cfg.chunk_frames = 24;
  cfg.max_iters = 30;
  cfg.validate_every = 10;
  cfg.log_every = 1;
  cfg.m1 = MarginSchedule::Linear(0.0, 0.2, 20);
  cfg.m2 = MarginSchedule::Linear(0.0, 0.1, 20);
  return cfg;
}

bool SameParams(const BackboneModel<double>& a, const BackboneModel<double>& b) {
  if (a.params.size() != b.params.size()) return false;
  for (const auto& [name, t] : a.params)
    if (!(b.params.at(name).value() == t.value()).all()) return false;
  return true;
}

TEST(SampleChunk, ExactLengthIsWholeUtterance) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd u = Eigen::MatrixXd::Random(50, 4);
  EXPECT_EQ(SampleChunk(u, 50, rng), u);
}

TEST(SampleChunk, LongUtteranceSlicesAreSeededAndInRange) {
  const Eigen::MatrixXd u = Eigen::VectorXd::LinSpaced(200, 0, 199).replicate(1, 3);
  std::mt19937_64 a(2), b(2);
  std::set<double> starts;
  for (int i = 0; i < 300; ++i) {
    const auto c = SampleChunk(u, 100, a);
    EXPECT_EQ(c, SampleChunk(u, 100, b));
    ASSERT_EQ(c.rows(), 100);
    EXPECT_GE(c(0, 0), 0.0);
    EXPECT_LE(c(0, 0), 100.0);
    EXPECT_EQ(c(99, 0) - c(0, 0), 99.0);
    starts.insert(c(0, 0));
  }
  EXPECT_GT(starts.size(), 50u);
}

TEST(SampleChunk, ShortUtteranceWraps) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd u = Eigen::VectorXd::LinSpaced(7, 0, 6);
  const auto c = SampleChunk(u, 17, rng);
  ASSERT_EQ(c.rows(), 17);
  for (int i = 0; i < 17; ++i) EXPECT_EQ(c(i, 0), i % 7);
  EXPECT_THROW(SampleChunk(Eigen::MatrixXd(0, 3), 5, rng), EmptyFeaturesError);
}

TEST(Sgd, ZeroGradientKeepsParams) {
  Tensor<double> p({3}, Eigen::ArrayXd::Constant(3, 0.7), true);
  OptimizerState<double> opt;
  SgdStep<double>({{"p", &p}}, opt);
  EXPECT_TRUE((p.value() == 0.7).all());
}

TEST(Sgd, OneAndTwoSteps) {
  Tensor<double> p({1}, Eigen::ArrayXd::Constant(1, 1.0), true);
  OptimizerState<double> opt;
  opt.lr = 0.1;
  p.mutable_grad().setOnes();
  SgdStep<double>({{"p", &p}}, opt);
  EXPECT_NEAR(p.value()[0], 0.9, 1e-15);
  SgdStep<double>({{"p", &p}}, opt);
  EXPECT_NEAR(p.value()[0], 1.0 - 0.29, 1e-15);
}

TEST(Sgd, VelocityShapeMismatch) {
  Tensor<double> p({2}, true);
  OptimizerState<double> opt;
  opt.velocity["p"] = Eigen::ArrayXd::Zero(3);
  EXPECT_THROW(SgdStep<double>({{"p", &p}}, opt), ShapeError);
}

TEST(Plateau, DecreasingLossesKeepRate) {
  PlateauScheduler s;
  double lr = 0.05;
  for (double m : {5.0, 4.0, 3.0, 2.5, 2.0, 1.0}) lr = PlateauUpdate(s, lr, m);
  EXPECT_EQ(lr, 0.05);
}

TEST(Plateau, FlatLossesHalveOnFourthCall) {
  PlateauScheduler s;
  std::vector<double> trace;
  double lr = 0.05;
  for (int i = 0; i < 4; ++i) trace.push_back(lr = PlateauUpdate(s, lr, 1.0));
  EXPECT_EQ(trace, (std::vector<double>{0.05, 0.05, 0.05, 0.025}));
  EXPECT_EQ(s.bad_count, 0);
}

TEST(Plateau, FloorHolds) {
  PlateauScheduler s;
  double lr = 1e-6;
  for (int i = 0; i < 20; ++i) {
    lr = PlateauUpdate(s, lr, 3.0);
    EXPECT_EQ(lr, 1e-6);
  }
  lr = 3e-6;
  for (int i = 0; i < 20; ++i) lr = PlateauUpdate(s, lr, 3.0);
  EXPECT_EQ(lr, 1e-6);
}

TEST(Plateau, SmallImprovementsDoNotCount) {
  PlateauScheduler s;
  bool improved = false;
  PlateauUpdate(s, 0.1, 1.0, &improved);
  EXPECT_TRUE(improved);
  PlateauUpdate(s, 0.1, 1.0 - 5e-5, &improved);
  EXPECT_FALSE(improved);
  PlateauUpdate(s, 0.1, 1.0 - 2e-4, &improved);
  EXPECT_TRUE(improved);
}

TEST(Plateau, InvalidSettings) {
  PlateauScheduler s;
  s.factor = 1.0;
  EXPECT_THROW(PlateauUpdate(s, 0.1, 1.0), ConfigError);
}

TEST(Transplant, IdentityMappingKeepsHead) {
  const auto base = MakeHead<double>(5, 4, 32.0, 1);
  const auto head = TransplantClassifier(base, {0, 1, 2, 3, 4});
  EXPECT_TRUE((head.weight.value() == base.weight.value()).all());
  EXPECT_EQ(head.scale, base.scale);
}

TEST(Transplant, SelectsRowsInOrder) {
  const auto base = MakeHead<double>(12, 3, 32.0, 2);
  const auto head = TransplantClassifier(base, {7, 2, 9});
  ASSERT_EQ(head.num_classes(), 3);
  const int rows[] = {7, 2, 9};
  for (int i = 0; i < 3; ++i)
    EXPECT_TRUE((head.weight.value().segment(i * 3, 3) == base.weight.value().segment(rows[i] * 3, 3)).all());
}

TEST(Transplant, LogitsMatchBaseModel) {
  const auto corpus = ToyCorpus(6, 3, 3);
  auto base = InitialState<double>(Tiny(), corpus.speakers, ToyStage());
  const std::vector<std::string> subset{"spk4", "spk1", "spk5"};
  auto refined = RefinementState(base, subset, ToyStage());
  EXPECT_TRUE(SameParams(base.model, refined.model));
  base.model.mode = refined.model.mode = Mode::kEval;
  const auto x = MakeInput<double>(corpus.train[0].feats);
  const auto full = ClassCosines(ForwardEmbedding(base.model, x), base.head).value();
  const auto sub = ClassCosines(ForwardEmbedding(refined.model, x), refined.head).value();
  EXPECT_EQ(sub[0], full[4]);
  EXPECT_EQ(sub[1], full[1]);
  EXPECT_EQ(sub[2], full[5]);
}

TEST(Transplant, UnknownSpeaker) {
  EXPECT_THROW(MapSpeakers({"a", "b"}, {"b", "z"}), LookupError);
  EXPECT_EQ(MapSpeakers({"a", "b", "c"}, {"c", "a"}), (std::vector<int>{2, 0}));
}

TEST(RunStage, ZeroIterationsIsNoOp) {
  const auto corpus = ToyCorpus(4, 3, 4);
  auto cfg = ToyStage();
  cfg.max_iters = 0;
  auto state = InitialState<double>(Tiny(), corpus.speakers, cfg);
  const auto before = state.Clone();
  const auto result = RunStage(cfg, corpus, state);
  EXPECT_EQ(result.iterations, 0);
  EXPECT_EQ(state.iteration, 0);
  EXPECT_TRUE(SameParams(before.model, state.model));
}

TEST(RunStage, EmptyCorpus) {
  TrainingCorpus corpus;
  corpus.speakers = {"a"};
  auto state = InitialState<double>(Tiny(), corpus.speakers, ToyStage());
  EXPECT_THROW(RunStage(ToyStage(), corpus, state), ConfigError);
}

TEST(RunStage, LogReplaysMarginSchedule) {
  const auto corpus = ToyCorpus(5, 4, 5);
  const auto cfg = ToyStage();
  auto state = InitialState<double>(Tiny(), corpus.speakers, cfg);
  std::ostringstream log;
  RunStage(cfg, corpus, state, &log);
  std::istringstream in(log.str());
  int lines = 0;
  double prev_lr = cfg.lr;
  for (std::string line; std::getline(in, line);) {
    long iter = 0;
    double loss = 0, lr = 0, m1 = 0, m2 = 0;
    if (line.find("val_loss") != std::string::npos) continue;
    ASSERT_EQ(std::sscanf(line.c_str(), "iter=%ld loss=%lf lr=%lf m1=%lf m2=%lf", &iter, &loss, &lr, &m1, &m2), 5)
        << line;
    EXPECT_NEAR(m1, MarginAt(cfg.m1, iter), 1e-6) << line;
    EXPECT_NEAR(m2, MarginAt(cfg.m2, iter), 1e-6) << line;
    EXPECT_LE(lr, prev_lr);
    EXPECT_GE(lr, cfg.min_lr);
    prev_lr = lr;
    ++lines;
  }
  EXPECT_EQ(lines, cfg.max_iters);
}

TEST(RunStage, DeterministicAcrossRunsAndWorkers) {
  const auto corpus = ToyCorpus(5, 4, 6);
  auto cfg = ToyStage();
  cfg.max_iters = 12;
  auto a = InitialState<double>(Tiny(), corpus.speakers, cfg);
  auto b = InitialState<double>(Tiny(), corpus.speakers, cfg);
  auto c = InitialState<double>(Tiny(), corpus.speakers, cfg);
  RunStage(cfg, corpus, a);
  RunStage(cfg, corpus, b);
  cfg.workers = 3;
  RunStage(cfg, corpus, c);
  EXPECT_TRUE(SameParams(a.model, b.model));
  EXPECT_TRUE(SameParams(a.model, c.model));
  EXPECT_TRUE((a.head.weight.value() == c.head.weight.value()).all());
}

TEST(RunStage, LossDecreases) {
  const auto corpus = ToyCorpus(20, 5, 7);
  auto cfg = ToyStage();
  cfg.max_iters = 500;
  cfg.validate_every = 100;
  cfg.log_every = 1;
  cfg.m1 = MarginSchedule::Linear(0.0, 0.2, 125);
  cfg.m2 = MarginSchedule::Linear(0.0, 0.1, 125);
  auto state = InitialState<double>(Tiny(), corpus.speakers, cfg);
  auto untrained = state.Clone();
  const auto result = RunStage(cfg, corpus, state);
  EXPECT_EQ(result.iterations, 500);
  EXPECT_LT(result.last_loss, result.first_loss);
  EXPECT_LT(result.best_valid_loss, ValidationLoss(untrained, corpus));
}

TEST(RunStage, StopsAtFloorWithoutImprovement) {
  const auto corpus = ToyCorpus(4, 3, 8);
  auto cfg = ToyStage();
  cfg.lr = 1e-6;
  cfg.max_iters = 200;
  cfg.validate_every = 5;
  cfg.improve_threshold = 1e9;  // nothing counts as better after the first
  auto state = InitialState<double>(Tiny(), corpus.speakers, cfg);
  const auto result = RunStage(cfg, corpus, state);
  EXPECT_EQ(result.iterations, 10);
  EXPECT_EQ(result.stop_reason, "learning rate at floor without improvement");
}

TEST(Checkpoint, RoundTripAndFiles) {
  const auto corpus = ToyCorpus(4, 3, 9);
  auto cfg = ToyStage();
  cfg.max_iters = 20;
  const auto dir = std::filesystem::temp_directory_path() / "spkv_trainer_ckpt";
  std::filesystem::remove_all(dir);
  cfg.checkpoint_dir = dir.string();
  auto state = InitialState<double>(Tiny(), corpus.speakers, cfg);
  const auto result = RunStage(cfg, corpus, state);
  EXPECT_EQ(result.checkpoints.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1_best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1_last.ckpt"));
  const auto loaded = LoadTrainState<double>((dir / "stage1_last.ckpt").string());
  EXPECT_TRUE(SameParams(state.model, loaded.model));
  EXPECT_EQ(loaded.iteration, 20);
  EXPECT_EQ(loaded.speakers, corpus.speakers);
  EXPECT_EQ(loaded.optimizer.lr, state.optimizer.lr);
  EXPECT_EQ(loaded.scheduler.best, state.scheduler.best);
  EXPECT_TRUE((loaded.head.weight.value() == state.head.weight.value()).all());
  for (const auto& [name, v] : state.optimizer.velocity)
    EXPECT_TRUE((loaded.optimizer.velocity.at(name) == v).all()) << name;
  for (const auto& [name, t] : state.model.buffers)
    EXPECT_TRUE((loaded.model.buffers.at(name).value() == t.value()).all()) << name;
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(LoadTrainState<double>((dir / "junk.ckpt").string()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto corpus = ToyCorpus(4, 3, 10);
  auto cfg = ToyStage();
  cfg.max_iters = 20;
  auto straight = InitialState<double>(Tiny(), corpus.speakers, cfg);
  RunStage(cfg, corpus, straight);
  const auto path = (std::filesystem::temp_directory_path() / "spkv_resume.ckpt").string();
  auto first = InitialState<double>(Tiny(), corpus.speakers, cfg);
  cfg.max_iters = 10;
  RunStage(cfg, corpus, first);
  SaveTrainState(path, first);
  auto resumed = LoadTrainState<double>(path);
  cfg.max_iters = 20;
  RunStage(cfg, corpus, resumed);
  EXPECT_TRUE(SameParams(straight.model, resumed.model));
  std::filesystem::remove(path);
}

TEST(StageConfig, Presets) {
  const auto p1 = StageConfig::PaperStage1();
  EXPECT_EQ(p1.batch_size, 320);
  EXPECT_EQ(p1.chunk_frames, 400);
  EXPECT_EQ(p1.validate_every, 8000);
  EXPECT_EQ(p1.momentum, 0.9);
  EXPECT_EQ(p1.min_lr, 1e-6);
  EXPECT_EQ(MarginAt(p1.m1, p1.max_iters), 0.2);
  EXPECT_EQ(MarginAt(p1.m2, p1.max_iters), 0.1);
  const auto p2 = StageConfig::PaperStage2();
  EXPECT_EQ(p2.batch_size, 160);
  EXPECT_EQ(p2.chunk_frames, 1000);
  EXPECT_EQ(p2.validate_every, 2000);
  EXPECT_NEAR(MarginAt(p2.m1, 2000), 0.4, 1e-15);
  EXPECT_EQ(MarginAt(p2.m1, 4000), 0.8);
  EXPECT_EQ(MarginAt(p2.m2, 0), 0.0);
  auto bad = StageConfig::DeskStage1();
  bad.chunk_frames = 4;
  EXPECT_THROW(ValidateStageConfig(bad, 8), ConfigError);
}

}  // namespace
}  // namespace spkv
