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

#ifndef SPKV_AUGMENT_H_
#define SPKV_AUGMENT_H_

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spkv/wav.h"

namespace spkv {

enum class AugmentKind { kReverb, kMusic, kNoise, kBabble };

std::string ToString(AugmentKind kind);
AugmentKind ParseAugmentKind(const std::string& name);

struct AugmentSpec {
  AugmentKind kind = AugmentKind::kNoise;
  double snr_low_db = 0.0;
  double snr_high_db = 15.0;
  double interval_s = 1.0;  // noise kind only
  int babble_min = 3;       // babble kind only
  int babble_max = 7;
  double rt60_s = 0.4;      // reverb kind, synthetic RIR when no pool given
  std::uint64_t seed = 0;
};

// Music 5-15 dB, noise 0-15 dB at 1 s intervals, babble 13-20 dB with 3-7
// talkers. Reverb ignores the SNR fields.
AugmentSpec DefaultAugmentSpec(AugmentKind kind, std::uint64_t seed);

void CheckAugmentSpec(const AugmentSpec& spec);

// Loops or trims x to exactly n samples.
Eigen::VectorXd FitLength(const Eigen::VectorXd& x, Eigen::Index n);

double MeanPower(const Eigen::VectorXd& x);

// Full convolution truncated to the input length. Rescaled by its peak only
// when the peak exceeds 1.
Waveform ConvolveRir(const Waveform& wave, const Waveform& rir);

// Exponentially decaying noise tail after a unit direct path.
Waveform SyntheticRir(double rt60_s, std::uint64_t seed);

// The two addends of a mixture, before clip protection.
struct MixComponents {
  Eigen::VectorXd signal;
  Eigen::VectorXd interference;
};

// Fits the interferer to the signal length and scales it so that
// 10 log10(P_signal / P_interference) == snr_db.
MixComponents ScaleToSnr(const Waveform& wave, const Waveform& interferer, double snr_db);

// Sum of the ScaleToSnr addends, divided by its peak if the peak exceeds 1.
Waveform MixAtSnr(const Waveform& wave, const Waveform& interferer, double snr_db);

struct NoisePlacement {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
  std::size_t source = 0;
  double snr_db = 0.0;
};

struct NoiseResult {
  Waveform wave;
  Eigen::VectorXd noise;  // added noise before clip protection
  std::vector<NoisePlacement> placements;
};

NoiseResult AddNoiseIntervals(const Waveform& wave, const std::vector<Waveform>& noises,
                              const AugmentSpec& spec);

struct BabbleResult {
  Waveform wave;
  Eigen::VectorXd babble;  // scaled babble before clip protection
  std::vector<std::size_t> talkers;
  double snr_db = 0.0;
};

BabbleResult AddBabble(const Waveform& wave, const std::vector<Waveform>& speeches,
                       const AugmentSpec& spec);

// Stand-ins for music and noise collections: a seeded sequence of harmonic
// notes, and Gaussian noise through a random one-pole coloring filter.
Waveform SyntheticMusic(double duration_s, std::uint64_t seed);
Waveform SyntheticNoise(double duration_s, std::uint64_t seed);

// Interference pools used by Augment; each kind reads only its own pool.
struct AugmentSources {
  std::vector<Waveform> rirs;
  std::vector<Waveform> music;
  std::vector<Waveform> noises;
  std::vector<Waveform> speech;
};

Waveform Augment(const Waveform& wave, const AugmentSpec& spec, const AugmentSources& sources);

}  // namespace spkv

#endif  // SPKV_AUGMENT_H_
