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

#include "spkv/trainer.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace spkv {

void ValidateScheduler(const PlateauScheduler& sched) {
  if (!(sched.factor > 0.0 && sched.factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (sched.patience < 0) throw ConfigError("plateau patience must be >= 0");
  if (!(sched.min_lr > 0.0)) throw ConfigError("min_lr must be positive");
  if (sched.validate_every < 1) throw ConfigError("validate_every must be >= 1");
}

double PlateauUpdate(PlateauScheduler& sched, double lr, double metric, bool* improved) {
  ValidateScheduler(sched);
  const bool better = std::isfinite(metric) && (sched.best - metric >= sched.threshold ||
                                                (!std::isfinite(sched.best)));
  if (improved) *improved = better;
  if (better) {
    sched.best = metric;
    sched.bad_count = 0;
    return lr;
  }
  if (++sched.bad_count > sched.patience) {
    sched.bad_count = 0;
    return std::max(lr * sched.factor, sched.min_lr);
  }
  return lr;
}

Eigen::MatrixXd SampleChunk(const Eigen::MatrixXd& utt, int chunk_frames, std::mt19937_64& rng) {
  if (chunk_frames < 1) throw ArgumentError("chunk_frames must be >= 1");
  const Index T = utt.rows();
  if (T == 0) throw EmptyFeaturesError("cannot sample a chunk from an empty utterance");
  if (T <= chunk_frames) {
    Eigen::MatrixXd out(chunk_frames, utt.cols());
    for (int i = 0; i < chunk_frames; ++i) out.row(i) = utt.row(i % T);
    return out;
  }
  std::uniform_int_distribution<Index> start(0, T - chunk_frames);
  return utt.middleRows(start(rng), chunk_frames);
}

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<int> MapSpeakers(const std::vector<std::string>& base_speakers,
                             const std::vector<std::string>& subset_speakers) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < base_speakers.size(); ++i) index.emplace(base_speakers[i], static_cast<int>(i));
  std::vector<int> rows;
  rows.reserve(subset_speakers.size());
  for (const auto& spk : subset_speakers) {
    auto it = index.find(spk);
    if (it == index.end()) throw LookupError("speaker '" + spk + "' is not in the pre-training label space");
    rows.push_back(it->second);
  }
  return rows;
}

StageConfig StageConfig::PaperStage1() {
  StageConfig c;
  c.stage = 1;
  c.batch_size = 320;
  c.chunk_frames = 400;
  c.validate_every = 8000;
  c.log_every = 100;
  c.max_iters = 400000;
  c.m1 = MarginSchedule::Linear(0.0, 0.2, 100000);
  c.m2 = MarginSchedule::Linear(0.0, 0.1, 100000);
  return c;
}

StageConfig StageConfig::PaperStage2() {
  StageConfig c;
  c.stage = 2;
  c.batch_size = 160;
  c.chunk_frames = 1000;
  c.validate_every = 2000;
  c.log_every = 100;
  c.max_iters = 100000;
  c.lr = 0.01;
  c.m1 = MarginSchedule::Exponential(0.2, 0.8, 4000);
  c.m2 = MarginSchedule::Constant(0.0);
  return c;
}

StageConfig StageConfig::DeskStage1() { return StageConfig{}; }

StageConfig StageConfig::DeskStage2() {
  StageConfig c;
  c.stage = 2;
  c.chunk_frames = 300;
  c.max_iters = 200;
  c.validate_every = 50;
  c.lr = 0.01;
  c.m1 = MarginSchedule::Exponential(0.2, 0.8, 100);
  c.m2 = MarginSchedule::Constant(0.0);
  return c;
}

void ValidateStageConfig(const StageConfig& cfg, int min_frames) {
  if (cfg.stage != 1 && cfg.stage != 2) throw ConfigError("stage must be 1 or 2");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.chunk_frames < min_frames)
    throw ConfigError("chunk_frames " + std::to_string(cfg.chunk_frames) + " is below the backbone minimum " +
                      std::to_string(min_frames));
  if (cfg.max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (cfg.validate_every < 1) throw ConfigError("validate_every must be >= 1");
  if (cfg.log_every < 1) throw ConfigError("log_every must be >= 1");
  if (!(cfg.lr >= cfg.min_lr)) throw ConfigError("lr must be >= min_lr");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(cfg.scale > 0.0)) throw ConfigError("scale must be positive");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  PlateauScheduler sched;
  sched.patience = cfg.patience;
  sched.factor = cfg.factor;
  sched.min_lr = cfg.min_lr;
  sched.validate_every = cfg.validate_every;
  ValidateScheduler(sched);
  ValidateSchedule(cfg.m1);
  ValidateSchedule(cfg.m2);
}

Batch BuildBatch(const TrainingCorpus& corpus, const StageConfig& cfg, long batch_index) {
  std::vector<std::vector<const LabeledUtterance*>> by_label(corpus.speakers.size());
  for (const auto& u : corpus.train) {
    if (u.label < 0 || static_cast<std::size_t>(u.label) >= by_label.size())
      throw ConfigError("utterance '" + u.id + "' has label outside the speaker list");
    if (u.feats.rows() > 0) by_label[static_cast<std::size_t>(u.label)].push_back(&u);
  }
  std::vector<int> usable;
  for (std::size_t i = 0; i < by_label.size(); ++i)
    if (!by_label[i].empty()) usable.push_back(static_cast<int>(i));
  if (usable.empty()) throw ConfigError("training corpus has no non-empty utterances");

  std::mt19937_64 rng(MixSeed(cfg.seed, static_cast<std::uint64_t>(batch_index)));
  std::uniform_int_distribution<std::size_t> pick_spk(0, usable.size() - 1);
  Batch batch;
  batch.chunks.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const int label = usable[pick_spk(rng)];
    const auto& utts = by_label[static_cast<std::size_t>(label)];
    std::uniform_int_distribution<std::size_t> pick_utt(0, utts.size() - 1);
    batch.chunks.push_back(SampleChunk(utts[pick_utt(rng)]->feats, cfg.chunk_frames, rng));
    batch.labels.push_back(label);
  }
  return batch;
}

}  // namespace spkv
