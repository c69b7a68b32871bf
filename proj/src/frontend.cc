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

#include "spkv/frontend.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "spkv/errors.h"

namespace spkv {
namespace {

double Mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double InverseMel(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

void CheckConfig(const FrontendConfig& cfg) {
  if (cfg.frame_length <= 0 || cfg.frame_shift <= 0)
    throw ConfigError("frame length and shift must be positive");
  if (cfg.fft_size < cfg.frame_length)
    throw ConfigError("fft_size must be at least frame_length");
  if (cfg.num_mel_bins < 1) throw ConfigError("num_mel_bins must be >= 1");
  if (!(cfg.low_freq >= 0.0 && cfg.low_freq < cfg.high_freq &&
        cfg.high_freq <= kSampleRate / 2.0))
    throw ConfigError("mel range must satisfy 0 <= low < high <= 4000 Hz");
  if (!(cfg.log_floor > 0.0)) throw ConfigError("log_floor must be positive");
}

Eigen::VectorXd Window(const FrontendConfig& cfg) {
  const int n = cfg.frame_length;
  const double a = 2.0 * std::numbers::pi / (n - 1);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    switch (cfg.window) {
      case WindowType::kHamming: w[i] = 0.54 - 0.46 * std::cos(a * i); break;
      case WindowType::kHanning: w[i] = 0.5 - 0.5 * std::cos(a * i); break;
      case WindowType::kPovey: w[i] = std::pow(0.5 - 0.5 * std::cos(a * i), 0.85); break;
    }
  }
  return w;
}

// Copies frame t (int16 scale) with the DC offset removed.
Eigen::VectorXd RawFrame(const Waveform& wave, Eigen::Index t, const FrontendConfig& cfg) {
  Eigen::VectorXd frame =
      wave.samples.segment(t * cfg.frame_shift, cfg.frame_length) * 32768.0;
  if (cfg.remove_dc) frame.array() -= frame.mean();
  return frame;
}

}  // namespace

Eigen::Index NumFrames(Eigen::Index num_samples, const FrontendConfig& cfg) {
  if (num_samples < cfg.frame_length)
    throw LengthError("waveform has " + std::to_string(num_samples) +
                      " samples, need at least " + std::to_string(cfg.frame_length));
  return (num_samples - cfg.frame_length) / cfg.frame_shift + 1;
}

Eigen::MatrixXd MelBanks(const FrontendConfig& cfg) {
  CheckConfig(cfg);
  const int num_fft_bins = cfg.fft_size / 2;
  const double bin_width = static_cast<double>(kSampleRate) / cfg.fft_size;
  const double mel_low = Mel(cfg.low_freq);
  const double mel_delta = (Mel(cfg.high_freq) - mel_low) / (cfg.num_mel_bins + 1);
  Eigen::MatrixXd banks = Eigen::MatrixXd::Zero(cfg.num_mel_bins, num_fft_bins);
  for (int b = 0; b < cfg.num_mel_bins; ++b) {
    const double left = mel_low + b * mel_delta;
    const double center = left + mel_delta;
    const double right = center + mel_delta;
    for (int i = 0; i < num_fft_bins; ++i) {
      const double mel = Mel(i * bin_width);
      if (mel > left && mel < right) {
        banks(b, i) = mel <= center ? (mel - left) / (center - left)
                                    : (right - mel) / (right - center);
      }
    }
  }
  return banks;
}

Eigen::VectorXd MelCenterFrequencies(const FrontendConfig& cfg) {
  CheckConfig(cfg);
  const double mel_low = Mel(cfg.low_freq);
  const double mel_delta = (Mel(cfg.high_freq) - mel_low) / (cfg.num_mel_bins + 1);
  Eigen::VectorXd centers(cfg.num_mel_bins);
  for (int b = 0; b < cfg.num_mel_bins; ++b)
    centers[b] = InverseMel(mel_low + (b + 1) * mel_delta);
  return centers;
}

Eigen::VectorXd FrameLogEnergy(const Waveform& wave, const FrontendConfig& cfg) {
  CheckWaveform(wave);
  CheckConfig(cfg);
  const Eigen::Index num_frames = NumFrames(wave.size(), cfg);
  Eigen::VectorXd energy(num_frames);
  for (Eigen::Index t = 0; t < num_frames; ++t)
    energy[t] = std::log(std::max(RawFrame(wave, t, cfg).squaredNorm(), cfg.log_floor));
  return energy;
}

FeatureMatrix ComputeLogMel(const Waveform& wave, const FrontendConfig& cfg) {
  CheckWaveform(wave);
  CheckConfig(cfg);
  const Eigen::Index num_frames = NumFrames(wave.size(), cfg);
  const Eigen::MatrixXd banks = MelBanks(cfg);
  const Eigen::VectorXd window = Window(cfg);
  const int half = cfg.fft_size / 2;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> padded(cfg.fft_size, 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(half);

  FeatureMatrix out;
  out.frames.resize(num_frames, cfg.num_mel_bins);
  out.log_energy.resize(num_frames);
  for (Eigen::Index t = 0; t < num_frames; ++t) {
    Eigen::VectorXd frame = RawFrame(wave, t, cfg);
    out.log_energy[t] = std::log(std::max(frame.squaredNorm(), cfg.log_floor));
    if (cfg.preemph != 0.0) {
      for (int i = cfg.frame_length - 1; i > 0; --i) frame[i] -= cfg.preemph * frame[i - 1];
      frame[0] -= cfg.preemph * frame[0];
    }
    frame.array() *= window.array();
    std::copy(frame.data(), frame.data() + cfg.frame_length, padded.begin());
    fft.fwd(spectrum, padded);
    for (int i = 0; i < half; ++i) power[i] = std::norm(spectrum[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd mel = banks * power;
    out.frames.row(t) = mel.array().max(cfg.log_floor).log().transpose();
  }
  return out;
}

VadMask EnergyVad(const Eigen::VectorXd& log_energy, const VadConfig& cfg) {
  if (cfg.context < 0) throw ConfigError("vad context must be >= 0");
  const Eigen::Index n = log_energy.size();
  VadMask mask(static_cast<std::size_t>(n), false);
  if (n == 0) return mask;
  const double threshold = cfg.energy_threshold + cfg.mean_scale * log_energy.mean();
  for (Eigen::Index t = 0; t < n; ++t) {
    int num = 0, den = 0;
    for (Eigen::Index u = t - cfg.context; u <= t + cfg.context; ++u) {
      if (u < 0 || u >= n) continue;
      ++den;
      if (log_energy[u] > threshold) ++num;
    }
    mask[static_cast<std::size_t>(t)] = num >= den * cfg.proportion;
  }
  return mask;
}

VadMask EnergyVad(const Waveform& wave, const FrontendConfig& frontend, const VadConfig& cfg) {
  return EnergyVad(FrameLogEnergy(wave, frontend), cfg);
}

FeatureMatrix SlidingCmn(const FeatureMatrix& feats, int window_frames) {
  if (window_frames < 1) throw ConfigError("cmn window must be >= 1 frame");
  const Eigen::Index n = feats.num_frames();
  const Eigen::Index dim = feats.dim();
  // prefix(t) = sum of rows [0, t)
  Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(n + 1, dim);
  for (Eigen::Index t = 0; t < n; ++t) prefix.row(t + 1) = prefix.row(t) + feats.frames.row(t);

  FeatureMatrix out = feats;
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::Index start = t - window_frames / 2;
    Eigen::Index end = start + window_frames;
    if (start < 0) {
      end -= start;
      start = 0;
    }
    if (end > n) {
      start -= end - n;
      end = n;
    }
    start = std::max<Eigen::Index>(start, 0);
    out.frames.row(t) -= (prefix.row(end) - prefix.row(start)) / static_cast<double>(end - start);
  }
  return out;
}

FeatureMatrix ApplyVad(const FeatureMatrix& feats, const VadMask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != feats.num_frames())
    throw ShapeError("VAD mask length " + std::to_string(mask.size()) +
                     " does not match " + std::to_string(feats.num_frames()) + " frames");
  const auto voiced = static_cast<Eigen::Index>(std::count(mask.begin(), mask.end(), true));
  if (voiced == 0) throw EmptyFeaturesError("no voiced frames");
  FeatureMatrix out;
  out.frames.resize(voiced, feats.dim());
  out.log_energy.resize(voiced);
  Eigen::Index k = 0;
  for (Eigen::Index t = 0; t < feats.num_frames(); ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    out.frames.row(k) = feats.frames.row(t);
    out.log_energy[k] = feats.log_energy.size() ? feats.log_energy[t] : 0.0;
    ++k;
  }
  return out;
}

FeatureMatrix ExtractFeatures(const Waveform& wave, const PipelineConfig& cfg) {
  const FeatureMatrix logmel = ComputeLogMel(wave, cfg.frontend);
  const VadMask mask = EnergyVad(logmel.log_energy, cfg.vad);
  return ApplyVad(SlidingCmn(logmel, cfg.cmn_window), mask);
}

void WriteFeatureFile(const std::string& path, const Eigen::MatrixXd& frames) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(frames.rows()),
                                 static_cast<std::uint64_t>(frames.cols())};
  out.write("SPKVFEAT", 8);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = frames;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

Eigen::MatrixXd ReadFeatureFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  std::uint64_t dims[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, "SPKVFEAT", 8) != 0) throw FormatError(path + ": bad feature header");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!in) throw FormatError(path + ": truncated feature data");
  return rm;
}

}  // namespace spkv
