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

#include <random>

#include "spkv/errors.h"
#include "spkv/nets.h"

namespace spkv {
namespace {

Eigen::MatrixXd RandomFeats(Index frames, Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd f(frames, dim);
  for (Index i = 0; i < f.size(); ++i) f.data()[i] = g(rng);
  return f;
}

ResNetConfig ToyResNet() {
  ResNetConfig c;
  c.base_channels = 8;
  c.block_counts = {1, 1, 1, 1};
  c.embedding_dim = 32;
  return c;
}

RepVGGConfig ToyRepVGG() {
  RepVGGConfig c;
  c.base_channels = 8;
  c.stage_depths = {1, 1, 1, 1, 1};
  c.embedding_dim = 32;
  return c;
}

// Random BN affine parameters and running statistics, so that fusion is exercised away from the identity.
template <typename S>
void Perturb(BackboneModel<S>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> g(0.0, 0.2);
  for (auto& [name, t] : model.params)
    if (name.find(".bn.") != std::string::npos)
      for (auto& v : t.value()) v = name.ends_with(".weight") ? u(rng) : g(rng);
  for (auto& [name, t] : model.buffers)
    for (auto& v : t.value()) v = name.ends_with("running_var") ? u(rng) : g(rng);
}

TEST(ResNet, LayerCounts) {
  EXPECT_EQ(WeightedLayerCount(ResNetConfig::ResNet74()), 74);
  EXPECT_EQ(WeightedLayerCount(ResNetConfig::ResNet152()), 152);
}

TEST(ResNet, ToyForwardShape) {
  auto model = BuildResNet<double>(ToyResNet(), 1);
  const auto feats = RandomFeats(400, 64, 2);
  const auto map = ForwardFrames(model, MakeInput<double>(feats));
  // stem keeps resolution, three stride-2 stages: 64 -> 8, 400 -> 50
  EXPECT_EQ(map.shape(), (Shape{1, 8 * 8 * 4, 8, 50}));
  EXPECT_TRUE(map.value().allFinite());
  EXPECT_EQ(TotalStride(ToyResNet()), 8);
  EXPECT_EQ(PooledDim(ToyResNet()), 2 * 256 * 8);
}

TEST(ResNet, ProjectionShortcutsOnlyWhereShapesChange) {
  ResNetConfig c = ToyResNet();
  c.block_counts = {2, 2, 1, 1};
  auto model = BuildResNet<double>(c, 3);
  EXPECT_TRUE(model.has_param("layer1.0.shortcut.conv.weight"));
  EXPECT_FALSE(model.has_param("layer1.1.shortcut.conv.weight"));
  EXPECT_TRUE(model.has_param("layer2.0.shortcut.conv.weight"));
  EXPECT_FALSE(model.has_param("layer2.1.shortcut.conv.weight"));
}

TEST(ResNet, InvalidConfig) {
  ResNetConfig c = ToyResNet();
  c.block_counts[2] = 0;
  EXPECT_THROW(BuildResNet<double>(c, 0), ConfigError);
}

TEST(RepVGG, B2StageWidths) {
  const auto w = RepVGGStageWidths(RepVGGConfig::B2());
  EXPECT_EQ(w, (std::array<int, 5>{64, 160, 320, 640, 2560}));
}

TEST(RepVGG, BranchStructure) {
  auto model = BuildRepVGG<double>(ToyRepVGG(), 4);
  // stage 0 maps 1 -> 8 channels: no identity branch
  EXPECT_TRUE(model.has_param("stage0.0.dense.conv.weight"));
  EXPECT_TRUE(model.has_param("stage0.0.pointwise.conv.weight"));
  EXPECT_FALSE(model.has_param("stage0.0.identity.bn.weight"));
  RepVGGConfig c = ToyRepVGG();
  c.stage_depths = {2, 1, 1, 1, 1};
  auto deeper = BuildRepVGG<double>(c, 4);
  EXPECT_TRUE(deeper.has_param("stage0.1.identity.bn.weight"));
  EXPECT_FALSE(deeper.has_param("stage1.0.identity.bn.weight"));
}

TEST(RepVGG, ToyForwardShape) {
  auto model = BuildRepVGG<double>(ToyRepVGG(), 5);
  const auto map = ForwardFrames(model, MakeInput<double>(RandomFeats(100, 64, 6)));
  const auto widths = RepVGGStageWidths(ToyRepVGG());
  EXPECT_EQ(map.shape(), (Shape{1, widths[4], 4, 7}));
  EXPECT_TRUE(map.value().allFinite());
}

TEST(Frames, DoublingInputDoublesOutput) {
  auto model = BuildResNet<double>(ToyResNet(), 7);
  model.mode = Mode::kEval;
  const auto a = ForwardFrames(model, MakeInput<double>(RandomFeats(160, 64, 8)));
  const auto b = ForwardFrames(model, MakeInput<double>(RandomFeats(320, 64, 8)));
  EXPECT_EQ(b.dim(3), 2 * a.dim(3));
  EXPECT_EQ(DownsampledLength(161, ToyResNet()), 21);
}

TEST(Frames, EvalIsDeterministic) {
  auto model = BuildResNet<double>(ToyResNet(), 9);
  model.mode = Mode::kEval;
  const auto x = MakeInput<double>(RandomFeats(64, 64, 10));
  EXPECT_TRUE((ForwardEmbedding(model, x).value() == ForwardEmbedding(model, x).value()).all());
}

TEST(Frames, TooShortInput) {
  auto model = BuildResNet<double>(ToyResNet(), 11);
  EXPECT_THROW(ForwardFrames(model, MakeInput<double>(RandomFeats(7, 64, 12))), LengthError);
  EXPECT_THROW(ForwardFrames(model, MakeInput<double>(RandomFeats(40, 40, 12))), ShapeError);
}

TEST(Gsp, ConstantMap) {
  Tensor<double> map({2, 3, 2, 5}, Eigen::ArrayXd::Constant(60, 1.75));
  const auto out = GspPool(map);
  EXPECT_EQ(out.shape(), (Shape{2, 12}));
  for (Index b = 0; b < 2; ++b) {
    EXPECT_TRUE((out.value().segment(b * 12, 6) == 1.75).all());
    EXPECT_TRUE((out.value().segment(b * 12 + 6, 6) == 0.0).all());
  }
}

TEST(Gsp, SingleFrame) {
  Tensor<double> map({1, 2, 2, 1}, (Eigen::ArrayXd(4) << 1, -2, 3, 4).finished());
  const auto out = GspPool(map).value();
  EXPECT_EQ(out.head(4).matrix(), (Eigen::VectorXd(4) << 1, -2, 3, 4).finished());
  EXPECT_TRUE((out.tail(4) == 0.0).all());
}

TEST(Gsp, MatchesTwoPassStatistics) {
  const Index n = 2, c = 3, f = 4, t = 9;
  Tensor<double> map({n, c, f, t}, RandomFeats(n * c * f * t, 1, 13).array());
  const auto out = GspPool(map).value();
  for (Index b = 0; b < n; ++b)
    for (Index r = 0; r < c * f; ++r) {
      double mean = 0.0, var = 0.0;
      for (Index k = 0; k < t; ++k) mean += map.value()[(b * c * f + r) * t + k];
      mean /= t;
      for (Index k = 0; k < t; ++k) var += std::pow(map.value()[(b * c * f + r) * t + k] - mean, 2);
      EXPECT_NEAR(out[b * 2 * c * f + r], mean, 1e-12);
      EXPECT_NEAR(out[b * 2 * c * f + c * f + r], std::sqrt(var / t), 1e-12);
    }
}

TEST(Gsp, TimePermutationInvariant) {
  const Index t = 7;
  Eigen::ArrayXd v = RandomFeats(2 * t, 1, 14).array();
  Eigen::ArrayXd p(2 * t);
  const int perm[t] = {3, 0, 6, 2, 5, 1, 4};
  for (Index r = 0; r < 2; ++r)
    for (Index k = 0; k < t; ++k) p[r * t + k] = v[r * t + perm[k]];
  const auto a = GspPool(Tensor<double>({1, 2, 1, t}, v)).value();
  const auto b = GspPool(Tensor<double>({1, 2, 1, t}, p)).value();
  EXPECT_LT((a - b).abs().maxCoeff(), 1e-14);
}

TEST(Embed, IdentityHeadAndZeroInput) {
  ResNetConfig c = ToyResNet();
  c.embedding_dim = PooledDim(c);
  auto model = BuildResNet<double>(c, 15);
  auto& w = model.param("embed.weight").value();
  w = Eigen::MatrixXd::Identity(c.embedding_dim, c.embedding_dim).reshaped().array();
  Tensor<double> pooled({1, c.embedding_dim}, RandomFeats(c.embedding_dim, 1, 16).array());
  EXPECT_EQ((Embed(model, pooled).value() - pooled.value()).abs().maxCoeff(), 0.0);
  EXPECT_EQ(Embed(model, Tensor<double>({1, c.embedding_dim})).value().abs().maxCoeff(), 0.0);
}

TEST(Embed, FixedDimensionForAnyLength) {
  auto model = BuildResNet<double>(ToyResNet(), 17);
  model.mode = Mode::kEval;
  for (Index frames : {8, 37, 123, 400}) {
    const auto e = ForwardEmbedding(model, MakeInput<double>(RandomFeats(frames, 64, 18)));
    EXPECT_EQ(e.shape(), (Shape{1, 32})) << frames;
  }
  Tensor<double> wrong({1, 5});
  EXPECT_THROW(Embed(model, wrong), ShapeError);
}

TEST(Reparam, NulledSideBranchesLeaveDenseBranch) {
  RepVGGConfig c = ToyRepVGG();
  c.stage_depths = {2, 1, 1, 1, 1};
  auto model = BuildRepVGG<double>(c, 19);
  Perturb(model, 20);
  model.mode = Mode::kEval;
  for (const char* side : {"stage0.1.pointwise.bn", "stage0.1.identity.bn"}) {
    model.param(std::string(side) + ".weight").value().setZero();
    model.param(std::string(side) + ".bias").value().setZero();
  }
  const auto fused = Reparameterize(model);
  const auto& w3 = model.params.at("stage0.1.dense.conv.weight").value();
  const auto& gamma = model.params.at("stage0.1.dense.bn.weight").value();
  const auto& var = model.buffers.at("stage0.1.dense.bn.running_var").value();
  const auto& k = fused.params.at("stage0.1.fused.weight").value();
  const Index per_out = k.size() / gamma.size();
  for (Index o = 0; o < gamma.size(); ++o) {
    const double s = gamma[o] / std::sqrt(var[o] + 1e-5);
    EXPECT_LT((k.segment(o * per_out, per_out) - w3.segment(o * per_out, per_out) * s).abs().maxCoeff(), 1e-14);
  }
}

TEST(Reparam, FusedMatchesMultiBranch) {
  auto model = BuildRepVGG<double>(ToyRepVGG(), 21);
  Perturb(model, 22);
  model.mode = Mode::kEval;
  const auto fused_model = Reparameterize(model);
  auto fused = fused_model.Clone();
  EXPECT_LT(fused.num_parameters(), model.num_parameters());
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto x = MakeInput<double>(RandomFeats(48, 64, 100 + i));
    worst = std::max(worst, (ForwardEmbedding(model, x).value() - ForwardEmbedding(fused, x).value()).abs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Reparam, StateErrors) {
  auto model = BuildRepVGG<double>(ToyRepVGG(), 23);
  EXPECT_THROW(Reparameterize(model), StateError);
  model.mode = Mode::kEval;
  const auto fused = Reparameterize(model);
  EXPECT_THROW(Reparameterize(fused), StateError);
  auto resnet = BuildResNet<double>(ToyResNet(), 24);
  resnet.mode = Mode::kEval;
  EXPECT_THROW(Reparameterize(resnet), StateError);
}

TEST(Reparam, SinglePrecisionWithinTolerance) {
  auto model = BuildRepVGG<float>(ToyRepVGG(), 25);
  Perturb(model, 26);
  model.mode = Mode::kEval;
  auto fused = Reparameterize(model);
  const auto x = MakeInput<float>(RandomFeats(48, 64, 27));
  EXPECT_LE((ForwardEmbedding(model, x).value() - ForwardEmbedding(fused, x).value()).abs().maxCoeff(), 1e-4f);
}

}  // namespace
}  // namespace spkv
