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

#include "spkv/augment.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spkv/errors.h"

namespace spkv {
namespace {

// Divides every addend by the mixture peak when it exceeds 1.
Waveform ClipProtect(Eigen::VectorXd mixed) {
  const double peak = mixed.size() ? mixed.cwiseAbs().maxCoeff() : 0.0;
  if (peak > 1.0) mixed /= peak;
  Waveform out;
  out.samples = std::move(mixed);
  return out;
}

double DrawSnr(const AugmentSpec& spec, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(spec.snr_low_db, spec.snr_high_db)(rng);
}

double GainForSnr(double signal_power, double noise_power, double snr_db) {
  return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

}  // namespace

std::string ToString(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::kReverb: return "reverb";
    case AugmentKind::kMusic: return "music";
    case AugmentKind::kNoise: return "noise";
    case AugmentKind::kBabble: return "babble";
  }
  return "?";
}

AugmentKind ParseAugmentKind(const std::string& name) {
  if (name == "reverb") return AugmentKind::kReverb;
  if (name == "music") return AugmentKind::kMusic;
  if (name == "noise") return AugmentKind::kNoise;
  if (name == "babble") return AugmentKind::kBabble;
  throw ConfigError("unknown augmentation kind '" + name + "'");
}

AugmentSpec DefaultAugmentSpec(AugmentKind kind, std::uint64_t seed) {
  AugmentSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  switch (kind) {
    case AugmentKind::kReverb: spec.snr_low_db = spec.snr_high_db = 0.0; break;
    case AugmentKind::kMusic: spec.snr_low_db = 5.0; spec.snr_high_db = 15.0; break;
    case AugmentKind::kNoise: spec.snr_low_db = 0.0; spec.snr_high_db = 15.0; break;
    case AugmentKind::kBabble: spec.snr_low_db = 13.0; spec.snr_high_db = 20.0; break;
  }
  return spec;
}

void CheckAugmentSpec(const AugmentSpec& spec) {
  if (!(spec.snr_low_db <= spec.snr_high_db))
    throw ConfigError("augment SNR range must satisfy low <= high");
  if (spec.kind == AugmentKind::kNoise && !(spec.interval_s > 0.0))
    throw ConfigError("noise interval must be positive");
  if (spec.kind == AugmentKind::kBabble &&
      (spec.babble_min < 1 || spec.babble_min > spec.babble_max))
    throw ConfigError("babble talker range must satisfy 1 <= min <= max");
  if (spec.kind == AugmentKind::kReverb && !(spec.rt60_s > 0.0))
    throw ConfigError("rt60 must be positive");
}

Eigen::VectorXd FitLength(const Eigen::VectorXd& x, Eigen::Index n) {
  if (x.size() == 0) throw ArgumentError("cannot fit an empty signal");
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = x[i % x.size()];
  return out;
}

double MeanPower(const Eigen::VectorXd& x) {
  return x.size() ? x.squaredNorm() / static_cast<double>(x.size()) : 0.0;
}

Waveform ConvolveRir(const Waveform& wave, const Waveform& rir) {
  CheckWaveform(wave);
  CheckWaveform(rir);
  if (rir.size() == 0) throw ArgumentError("empty room impulse response");
  const Eigen::Index n = wave.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < rir.size(); ++k) {
    const double h = rir.samples[k];
    if (h == 0.0 || k >= n) continue;
    out.tail(n - k) += h * wave.samples.head(n - k);
  }
  return ClipProtect(std::move(out));
}

Waveform SyntheticRir(double rt60_s, std::uint64_t seed) {
  if (!(rt60_s > 0.0)) throw ArgumentError("rt60 must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto length = static_cast<Eigen::Index>(std::ceil(rt60_s * kSampleRate));
  Waveform rir;
  rir.samples = Eigen::VectorXd::Zero(std::max<Eigen::Index>(length, 2));
  rir.samples[0] = 1.0;
  // -60 dB amplitude decay over rt60: exp(-6.908 t / rt60).
  const double decay = std::log(1000.0) / (rt60_s * kSampleRate);
  for (Eigen::Index i = 8; i < rir.size(); ++i)
    rir.samples[i] = 0.3 * gauss(rng) * std::exp(-decay * static_cast<double>(i));
  return rir;
}

Waveform SyntheticMusic(double duration_s, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(std::llround(duration_s * kSampleRate));
  if (n < 1) throw ArgumentError("music duration must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Waveform out;
  out.samples = Eigen::VectorXd::Zero(n);
  constexpr double kTwoPi = 6.283185307179586;
  for (Eigen::Index start = 0; start < n;) {
    const auto len = std::min<Eigen::Index>(n - start, static_cast<Eigen::Index>((0.15 + 0.35 * uni(rng)) * kSampleRate));
    const double f0 = 110.0 * std::pow(2.0, std::floor(uni(rng) * 36.0) / 12.0);  // A2..A5
    for (Eigen::Index i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double env = std::exp(-3.0 * t);
      double v = 0.0;
      for (int h = 1; h <= 4 && h * f0 < 3900.0; ++h) v += std::sin(kTwoPi * h * f0 * t) / h;
      out.samples[start + i] = 0.3 * env * v;
    }
    start += len;
  }
  return out;
}

Waveform SyntheticNoise(double duration_s, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(std::llround(duration_s * kSampleRate));
  if (n < 1) throw ArgumentError("noise duration must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double pole = std::uniform_real_distribution<double>(-0.5, 0.95)(rng);
  Waveform out;
  out.samples.resize(n);
  double state = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) out.samples[i] = state = gauss(rng) + pole * state;
  out.samples *= 0.1 / std::sqrt(MeanPower(out.samples));
  return out;
}

MixComponents ScaleToSnr(const Waveform& wave, const Waveform& interferer, double snr_db) {
  CheckWaveform(wave);
  CheckWaveform(interferer);
  if (!std::isfinite(snr_db)) throw ArgumentError("SNR must be finite");
  MixComponents mix;
  mix.signal = wave.samples;
  Eigen::VectorXd noise = FitLength(interferer.samples, wave.size());
  const double noise_power = MeanPower(noise);
  if (!(noise_power > 0.0)) throw ArgumentError("interferer has zero energy");
  mix.interference = GainForSnr(MeanPower(wave.samples), noise_power, snr_db) * noise;
  return mix;
}

Waveform MixAtSnr(const Waveform& wave, const Waveform& interferer, double snr_db) {
  MixComponents mix = ScaleToSnr(wave, interferer, snr_db);
  return ClipProtect(mix.signal + mix.interference);
}

NoiseResult AddNoiseIntervals(const Waveform& wave, const std::vector<Waveform>& noises,
                              const AugmentSpec& spec) {
  CheckWaveform(wave);
  CheckAugmentSpec(spec);
  if (noises.empty()) throw ArgumentError("noise augmentation needs at least one noise source");
  for (const auto& n : noises) {
    CheckWaveform(n);
    if (!(MeanPower(n.samples) > 0.0)) throw ArgumentError("noise source has zero energy");
  }
  std::mt19937_64 rng(spec.seed);
  const auto interval = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(spec.interval_s * wave.sample_rate)));
  const double utterance_power = MeanPower(wave.samples);

  NoiseResult result;
  result.noise = Eigen::VectorXd::Zero(wave.size());
  for (Eigen::Index start = 0; start < wave.size(); start += interval) {
    NoisePlacement p;
    p.start = start;
    p.length = std::min(interval, wave.size() - start);
    p.source = std::uniform_int_distribution<std::size_t>(0, noises.size() - 1)(rng);
    p.snr_db = DrawSnr(spec, rng);
    const Eigen::VectorXd& src = noises[p.source].samples;
    const auto offset = std::uniform_int_distribution<Eigen::Index>(0, src.size() - 1)(rng);
    Eigen::VectorXd segment(p.length);
    for (Eigen::Index i = 0; i < p.length; ++i) segment[i] = src[(offset + i) % src.size()];
    double local_power = MeanPower(wave.samples.segment(start, p.length));
    if (!(local_power > 0.0)) local_power = utterance_power;
    const double noise_power = MeanPower(segment);
    // A silent stretch of the noise file contributes nothing.
    if (noise_power > 0.0)
      result.noise.segment(start, p.length) = GainForSnr(local_power, noise_power, p.snr_db) * segment;
    result.placements.push_back(p);
  }
  result.wave = ClipProtect(wave.samples + result.noise);
  return result;
}

BabbleResult AddBabble(const Waveform& wave, const std::vector<Waveform>& speeches,
                       const AugmentSpec& spec) {
  CheckWaveform(wave);
  CheckAugmentSpec(spec);
  if (static_cast<int>(speeches.size()) < spec.babble_min)
    throw ArgumentError("babble needs at least " + std::to_string(spec.babble_min) +
                        " speech sources, got " + std::to_string(speeches.size()));
  std::mt19937_64 rng(spec.seed);
  const int max_talkers = std::min<int>(spec.babble_max, static_cast<int>(speeches.size()));
  const int k = std::uniform_int_distribution<int>(spec.babble_min, max_talkers)(rng);
  std::vector<std::size_t> order(speeches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int i = 0; i < k; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i),
                                                               order.size() - 1)(rng);
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  BabbleResult result;
  result.talkers.assign(order.begin(), order.begin() + k);
  Waveform babble;
  babble.samples = Eigen::VectorXd::Zero(wave.size());
  for (std::size_t t : result.talkers) {
    CheckWaveform(speeches[t]);
    babble.samples += FitLength(speeches[t].samples, wave.size());
  }
  result.snr_db = DrawSnr(spec, rng);
  MixComponents mix = ScaleToSnr(wave, babble, result.snr_db);
  result.babble = mix.interference;
  result.wave = ClipProtect(mix.signal + mix.interference);
  return result;
}

Waveform Augment(const Waveform& wave, const AugmentSpec& spec, const AugmentSources& sources) {
  CheckAugmentSpec(spec);
  std::mt19937_64 rng(spec.seed);
  auto pick = [&rng](const std::vector<Waveform>& pool, const char* what) -> const Waveform& {
    if (pool.empty()) throw ArgumentError(std::string("no ") + what + " sources available");
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  switch (spec.kind) {
    case AugmentKind::kReverb:
      if (sources.rirs.empty()) return ConvolveRir(wave, SyntheticRir(spec.rt60_s, spec.seed));
      return ConvolveRir(wave, pick(sources.rirs, "rir"));
    case AugmentKind::kMusic: {
      const Waveform& music = pick(sources.music, "music");
      return MixAtSnr(wave, music, DrawSnr(spec, rng));
    }
    case AugmentKind::kNoise: {
      AugmentSpec s = spec;
      s.seed = rng();
      return AddNoiseIntervals(wave, sources.noises, s).wave;
    }
    case AugmentKind::kBabble: {
      AugmentSpec s = spec;
      s.seed = rng();
      return AddBabble(wave, sources.speech, s).wave;
    }
  }
  throw ArgumentError("unhandled augmentation kind");
}

}  // namespace spkv
