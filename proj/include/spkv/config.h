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

// Run configuration: a flat `key = value` text file with `#` comments.
// Command-line `--set key=value` entries are applied after the file.

#ifndef SPKV_CONFIG_H_
#define SPKV_CONFIG_H_

#include <cstdint>
#include <string>
#include <vector>

#include "spkv/augment.h"
#include "spkv/backend.h"
#include "spkv/frontend.h"
#include "spkv/nets.h"
#include "spkv/trainer.h"

namespace spkv {

struct SynthPlan {
  int speakers = 20;            // pre-training speakers
  int utts = 10;                // utterances per training speaker
  double duration_s = 6.0;
  int domain_b_speakers = 10;   // last N training speakers use the second domain
  int eval_speakers = 20;       // unseen second-domain speakers for trials
  int eval_utts = 10;
  int eval_enroll = 5;          // per eval speaker; the rest are test utterances
  int trials_target = 500;
  int trials_nontarget = 500;
  double valid_fraction = 0.1;
};

struct StageSettings {
  StageConfig cfg;
  std::string manifest;  // relative paths resolve against the workdir
  std::string m1;        // schedule text; empty keeps the preset
  std::string m2;
};

enum class Precision { kFloat, kDouble };

struct RunConfig {
  std::string workdir = "work";
  std::uint64_t seed = 1;
  int workers = 1;
  SynthPlan synth;
  std::vector<AugmentKind> augment_kinds{AugmentKind::kReverb, AugmentKind::kMusic, AugmentKind::kNoise,
                                         AugmentKind::kBabble};
  int augment_copies = 1;
  PipelineConfig pipeline;
  std::string arch = "resnet";  // resnet | repvgg
  ResNetConfig resnet = ToyResNet();
  RepVGGConfig repvgg;
  Precision precision = Precision::kFloat;
  StageSettings stage1{StageConfig::DeskStage1(), "manifests/stage1.tsv", "", ""};
  StageSettings stage2{StageConfig::DeskStage2(), "manifests/stage2.tsv", "", ""};
  std::string stage2_init = "ckpt/stage1_best.ckpt";
  DcfParams dcf;
  double calibration_prior = 0.01;

  static ResNetConfig ToyResNet();
  ArchConfig Arch() const;
  // Resolves a workdir-relative path.
  std::string Path(const std::string& rel) const;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  std::string where;  // "file:line" or "<command line>"
};

std::vector<ConfigEntry> ParseConfigText(const std::string& text, const std::string& source);
std::vector<ConfigEntry> ReadConfigFile(const std::string& path);
// "key=value" override
ConfigEntry ParseOverride(const std::string& text);

// Applies preset keys first, then every other entry in order, then resolves
// margin schedules and validates. Errors name the offending entry.
RunConfig BuildRunConfig(const std::vector<ConfigEntry>& entries, RunConfig base = {});

void ValidateRunConfig(const RunConfig& cfg);

// Every key with its resolved value; feeding the output back reproduces cfg.
std::string DumpRunConfig(const RunConfig& cfg);

std::vector<std::string> ConfigKeys();

}  // namespace spkv

#endif  // SPKV_CONFIG_H_
