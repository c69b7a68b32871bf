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

#ifndef SPKV_WAV_H_
#define SPKV_WAV_H_

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spkv {

inline constexpr int kSampleRate = 8000;

// Mono PCM waveform with amplitudes nominally in [-1, 1].
struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = kSampleRate;

  Eigen::Index size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws FormatError unless the wave is 8 kHz with finite samples.
void CheckWaveform(const Waveform& wave);

// RIFF/WAVE, PCM16, mono. Reading accepts only 8 kHz mono PCM16 files.
std::vector<std::uint8_t> EncodeWav(const Waveform& wave);
Waveform DecodeWav(const std::vector<std::uint8_t>& bytes);
Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& wave);

}  // namespace spkv

#endif  // SPKV_WAV_H_
