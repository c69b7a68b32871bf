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

// Embedding extraction and cosine trial scoring.

#ifndef SPKV_SCORING_H_
#define SPKV_SCORING_H_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spkv/checkpoint.h"
#include "spkv/frontend.h"
#include "spkv/nets.h"

namespace spkv {

// Full-utterance forward of an eval-mode backbone on prepared features;
// returns the unit-norm embedding in double precision.
template <typename S>
Eigen::VectorXd EmbedFeatures(BackboneModel<S>& model, const Eigen::MatrixXd& feats) {
  if (model.mode != Mode::kEval) throw StateError("embedding extraction requires an eval-mode model");
  if (feats.rows() == 0) throw EmptyFeaturesError("utterance has no voiced frames");
  NoGradGuard no_grad;
  const Tensor<S> emb = ForwardEmbedding(model, MakeInput<S>(feats));
  Eigen::VectorXd v = emb.value().template cast<double>();
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("embedding has zero or non-finite norm");
  return v / norm;
}

template <typename S>
Eigen::VectorXd ExtractEmbedding(BackboneModel<S>& model, const Waveform& wave, const PipelineConfig& cfg = {}) {
  return EmbedFeatures(model, ExtractFeatures(wave, cfg).frames);
}

double CosineScore(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class TrialLabel { kUnknown, kTarget, kNontarget };

struct Trial {
  std::string enroll;
  std::string test;
  TrialLabel label = TrialLabel::kUnknown;
};

using TrialList = std::vector<Trial>;

struct ScoreSet {
  TrialList trials;
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
  bool labeled() const;
};

void CheckTrials(const TrialList& trials);

TrialList ParseTrials(const std::string& text, const std::string& source = "<trials>");
TrialList ReadTrials(const std::string& path);
void WriteTrials(const std::string& path, const TrialList& trials);

// Score file: `enroll test score` with 6 decimals, plus the label column when
// known so the file is self-contained for evaluation.
ScoreSet ParseScores(const std::string& text, const std::string& source = "<scores>");
ScoreSet ReadScores(const std::string& path);
std::string FormatScores(const ScoreSet& set);
void WriteScores(const std::string& path, const ScoreSet& set);

// enrollment model id -> utterance ids; ids without an entry enroll with the
// single utterance of the same name.
using EnrollMap = std::map<std::string, std::vector<std::string>>;

// Looks up an id, averaging and renormalizing multi-utterance enrollments.
Eigen::VectorXd ResolveEmbedding(const std::string& id, const EmbeddingStore& store,
                                 const EnrollMap& enroll = {});

ScoreSet ScoreTrials(const TrialList& trials, const EmbeddingStore& store, const EnrollMap& enroll = {});

}  // namespace spkv

#endif  // SPKV_SCORING_H_
