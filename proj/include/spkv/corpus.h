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

// Manifests, train/valid splits, trial lists and a source-filter synthetic
// speaker generator.

#ifndef SPKV_CORPUS_H_
#define SPKV_CORPUS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "spkv/scoring.h"
#include "spkv/wav.h"

namespace spkv {

struct ManifestEntry {
  std::string utt_id;
  std::string path;
  std::string speaker_id;
  std::string subset = "train";  // train | valid | enroll | test
};

using Manifest = std::vector<ManifestEntry>;

bool IsValidSubset(const std::string& subset);
void CheckManifest(const Manifest& m);

Manifest ParseManifest(const std::string& text, const std::string& source = "<manifest>");
Manifest ReadManifest(const std::string& path);
std::string FormatManifest(const Manifest& m);
void WriteManifest(const std::string& path, const Manifest& m);

// Speakers in order of first appearance.
std::vector<std::string> ManifestSpeakers(const Manifest& m);

// Holds out round(fraction * n) utterances of each speaker, chosen by a
// seeded shuffle; every speaker keeps at least one training utterance.
std::pair<Manifest, Manifest> SplitManifest(const Manifest& m, double valid_fraction, std::uint64_t seed);

// Labeled trials with exactly the requested class counts, drawn without
// replacement from all enroll x test pairs of distinct utterances.
TrialList MakeTrials(const Manifest& enroll, const Manifest& test, std::size_t n_target, std::size_t n_nontarget,
                     std::uint64_t seed);

// Two domains with different excitation statistics: domain 0 is a clean
// glottal pulse train, domain 1 is breathier with stronger jitter and a
// band-limited channel.
struct SyntheticSpeakerSpec {
  std::uint64_t seed = 0;
  int domain = 0;
  std::vector<double> resonances_hz;   // 3 to 5 entries in [100, 3700]
  std::vector<double> bandwidths_hz;
  double pitch_hz = 120.0;
  double tilt = 0.5;  // one-pole lowpass coefficient applied to the source
};

// `candidate` selects one of several independent draws for the same id.
SyntheticSpeakerSpec MakeSpeakerSpec(const std::string& speaker_id, int domain, std::uint64_t corpus_seed,
                                     int candidate = 0);
void CheckSpeakerSpec(const SyntheticSpeakerSpec& spec);

// Normalized distance over pitch, tilt and the first three resonances.
double SpeakerDistance(const SyntheticSpeakerSpec& a, const SyntheticSpeakerSpec& b);

// Specs for a whole corpus. Each speaker keeps the farthest of `candidates`
// draws from the speakers before it, so no two voices nearly coincide.
std::vector<SyntheticSpeakerSpec> MakeSpeakerSpecs(const std::vector<std::string>& speaker_ids, int domain,
                                                   std::uint64_t corpus_seed, int candidates = 16);
// Deterministic in (spec, utt_index, duration_s).
Waveform SynthesizeUtterance(const SyntheticSpeakerSpec& spec, int utt_index, double duration_s);

struct SynthConfig {
  int n_speakers = 20;
  int utts_per_speaker = 10;
  double duration_s = 6.0;
  std::uint64_t seed = 1;
  int domain = 0;
  std::string speaker_prefix = "spk";
  std::string subset = "train";
  int first_index = 0;  // speaker numbering offset
};

void CheckSynthConfig(const SynthConfig& cfg);

// Writes wav_dir/<utt_id>.wav for every utterance (nothing when wav_dir is
// empty) and returns the manifest.
Manifest GenerateSyntheticCorpus(const SynthConfig& cfg, const std::string& wav_dir);

}  // namespace spkv

#endif  // SPKV_CORPUS_H_
