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

// Log-mel filterbank front end with energy VAD and sliding mean
// normalization. Framing, mel warping and the VAD rule follow the Kaldi
// conventions (snip-edges framing, int16 sample scale, mel = 1127 ln(1+f/700)).

#ifndef SPKV_FRONTEND_H_
#define SPKV_FRONTEND_H_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spkv/wav.h"

namespace spkv {

enum class WindowType { kHamming, kHanning, kPovey };

struct FrontendConfig {
  int frame_length = 200;  // 25 ms at 8 kHz
  int frame_shift = 80;    // 10 ms
  int fft_size = 256;
  int num_mel_bins = 64;
  double low_freq = 20.0;
  double high_freq = 3700.0;
  double preemph = 0.97;
  bool remove_dc = true;
  double log_floor = 1e-10;
  WindowType window = WindowType::kHamming;
};

struct VadConfig {
  double energy_threshold = 5.0;
  double mean_scale = 0.5;
  double proportion = 0.6;
  int context = 2;  // frames on each side
};

// T x num_mel_bins log-mel energies plus the per-frame raw log energy.
struct FeatureMatrix {
  Eigen::MatrixXd frames;
  Eigen::VectorXd log_energy;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

using VadMask = std::vector<bool>;

struct PipelineConfig {
  FrontendConfig frontend;
  VadConfig vad;
  int cmn_window = 300;
};

// floor((n - frame_length) / frame_shift) + 1; LengthError below one frame.
Eigen::Index NumFrames(Eigen::Index num_samples, const FrontendConfig& cfg);

// num_mel_bins x (fft_size / 2) triangular weights.
Eigen::MatrixXd MelBanks(const FrontendConfig& cfg);

// Centre frequency (Hz) of every mel filter.
Eigen::VectorXd MelCenterFrequencies(const FrontendConfig& cfg);

Eigen::VectorXd FrameLogEnergy(const Waveform& wave, const FrontendConfig& cfg);

FeatureMatrix ComputeLogMel(const Waveform& wave, const FrontendConfig& cfg = {});

VadMask EnergyVad(const Eigen::VectorXd& log_energy, const VadConfig& cfg = {});
VadMask EnergyVad(const Waveform& wave, const FrontendConfig& frontend,
                  const VadConfig& cfg = {});

// Subtracts the mean of a window_frames-long window centred on each frame.
// Near the edges the window is shifted (not shrunk) to stay inside the
// utterance; utterances shorter than the window use the global mean.
FeatureMatrix SlidingCmn(const FeatureMatrix& feats, int window_frames = 300);

// Keeps voiced rows in order. EmptyFeaturesError if nothing is voiced.
FeatureMatrix ApplyVad(const FeatureMatrix& feats, const VadMask& mask);

// logmel -> VAD mask -> sliding CMN -> drop unvoiced frames.
FeatureMatrix ExtractFeatures(const Waveform& wave, const PipelineConfig& cfg = {});

// Binary dump: "SPKVFEAT" magic, u64 T, u64 dim, T*dim little-endian f64
// in row-major order.
void WriteFeatureFile(const std::string& path, const Eigen::MatrixXd& frames);
Eigen::MatrixXd ReadFeatureFile(const std::string& path);

}  // namespace spkv

#endif  // SPKV_FRONTEND_H_
