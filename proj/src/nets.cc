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

#include "spkv/nets.h"

#include <algorithm>
#include <numeric>

namespace spkv {

void ValidateConfig(const ResNetConfig& cfg) {
  if (cfg.base_channels < 1) throw ConfigError("resnet base_channels must be >= 1");
  for (int n : cfg.block_counts)
    if (n < 1) throw ConfigError("resnet block counts must all be >= 1");
  if (cfg.embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (cfg.feat_dim < 1) throw ConfigError("feat_dim must be >= 1");
}

void ValidateConfig(const RepVGGConfig& cfg) {
  if (cfg.base_channels < 1) throw ConfigError("repvgg base_channels must be >= 1");
  for (int n : cfg.stage_depths)
    if (n < 1) throw ConfigError("repvgg stage depths must all be >= 1");
  if (!(cfg.width_a > 0.0) || !(cfg.width_b > 0.0))
    throw ConfigError("repvgg width multipliers must be > 0");
  if (cfg.embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (cfg.feat_dim < 1) throw ConfigError("feat_dim must be >= 1");
  for (int w : RepVGGStageWidths(cfg))
    if (w < 1) throw ConfigError("repvgg width multipliers produce an empty stage");
}

void ValidateConfig(const ArchConfig& cfg) {
  std::visit([](const auto& c) { ValidateConfig(c); }, cfg);
}

int WeightedLayerCount(const ResNetConfig& cfg) {
  return 3 * std::accumulate(cfg.block_counts.begin(), cfg.block_counts.end(), 0) + 2;
}

std::array<int, 5> RepVGGStageWidths(const RepVGGConfig& cfg) {
  const double base = cfg.base_channels;
  auto round = [](double v) { return static_cast<int>(std::lround(v)); };
  return {std::min(cfg.base_channels, round(base * cfg.width_a)), round(base * cfg.width_a),
          round(2 * base * cfg.width_a), round(4 * base * cfg.width_a),
          round(8 * base * cfg.width_b)};
}

int TotalStride(const ArchConfig& cfg) {
  return std::holds_alternative<ResNetConfig>(cfg) ? 8 : 16;
}

Index DownsampledLength(Index length, const ArchConfig& cfg) {
  for (int s = TotalStride(cfg); s > 1; s /= 2) length = (length + 1) / 2;
  return length;
}

int FinalChannels(const ArchConfig& cfg) {
  if (const auto* r = std::get_if<ResNetConfig>(&cfg))
    return r->base_channels * 8 * kBottleneckExpansion;
  return RepVGGStageWidths(std::get<RepVGGConfig>(cfg))[4];
}

int EmbeddingDim(const ArchConfig& cfg) {
  return std::visit([](const auto& c) { return c.embedding_dim; }, cfg);
}

int PooledDim(const ArchConfig& cfg) {
  const int feat_dim = std::visit([](const auto& c) { return c.feat_dim; }, cfg);
  return 2 * FinalChannels(cfg) * static_cast<int>(DownsampledLength(feat_dim, cfg));
}

}  // namespace spkv
