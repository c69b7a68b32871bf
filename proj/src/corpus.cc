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

#include "spkv/corpus.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "spkv/errors.h"
#include "spkv/trainer.h"

namespace spkv {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t Fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two-pole resonator y[n] = g x[n] + a1 y[n-1] - a2 y[n-2] with unit peak gain.
struct Resonator {
  double a1 = 0, a2 = 0, g = 1, y1 = 0, y2 = 0;

  void Set(double freq, double bw) {
    const double r = std::exp(-kPi * bw / kSampleRate);
    const double theta = 2.0 * kPi * freq / kSampleRate;
    a1 = 2.0 * r * std::cos(theta);
    a2 = r * r;
    g = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
  }

  double Step(double x) {
    const double y = g * x + a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

bool IsValidSubset(const std::string& subset) {
  return subset == "train" || subset == "valid" || subset == "enroll" || subset == "test";
}

void CheckManifest(const Manifest& m) {
  std::set<std::string> ids;
  for (const auto& e : m) {
    if (e.utt_id.empty() || e.speaker_id.empty() || e.path.empty())
      throw FormatError("manifest entry with empty field");
    if (!IsValidSubset(e.subset)) throw FormatError("utterance '" + e.utt_id + "' has bad subset '" + e.subset + "'");
    if (!ids.insert(e.utt_id).second) throw FormatError("duplicate utterance id '" + e.utt_id + "'");
  }
}

Manifest ParseManifest(const std::string& text, const std::string& source) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = source + ":" + std::to_string(lineno);
    if (f.size() != 4) throw FormatError(where + ": expected 4 tab-separated fields, got " + std::to_string(f.size()));
    for (const auto& x : f)
      if (x.empty()) throw FormatError(where + ": empty field");
    if (!IsValidSubset(f[3])) throw FormatError(where + ": bad subset '" + f[3] + "'");
    if (!ids.insert(f[0]).second) throw FormatError(where + ": duplicate utterance id '" + f[0] + "'");
    m.push_back({f[0], f[1], f[2], f[3]});
  }
  return m;
}

Manifest ReadManifest(const std::string& path) { return ParseManifest(ReadText(path), path); }

std::string FormatManifest(const Manifest& m) {
  std::string out;
  for (const auto& e : m) out += e.utt_id + '\t' + e.path + '\t' + e.speaker_id + '\t' + e.subset + '\n';
  return out;
}

void WriteManifest(const std::string& path, const Manifest& m) {
  CheckManifest(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << FormatManifest(m);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::string> ManifestSpeakers(const Manifest& m) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : m)
    if (seen.insert(e.speaker_id).second) out.push_back(e.speaker_id);
  return out;
}

std::pair<Manifest, Manifest> SplitManifest(const Manifest& m, double valid_fraction, std::uint64_t seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) throw ConfigError("valid_fraction must lie in (0, 1)");
  CheckManifest(m);
  std::map<std::string, std::vector<std::size_t>> by_spk;
  for (std::size_t i = 0; i < m.size(); ++i) by_spk[m[i].speaker_id].push_back(i);
  std::vector<bool> held(m.size(), false);
  for (auto& [spk, idx] : by_spk) {
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(idx.size())));
    if (n_valid >= idx.size())
      throw SplitError("valid_fraction " + std::to_string(valid_fraction) + " leaves speaker '" + spk +
                       "' without training utterances");
    std::mt19937_64 rng(MixSeed(seed, Fnv1a(spk)));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_valid; ++k) held[idx[k]] = true;
  }
  Manifest train, valid;
  for (std::size_t i = 0; i < m.size(); ++i) {
    ManifestEntry e = m[i];
    e.subset = held[i] ? "valid" : "train";
    (held[i] ? valid : train).push_back(std::move(e));
  }
  return {train, valid};
}

TrialList MakeTrials(const Manifest& enroll, const Manifest& test, std::size_t n_target, std::size_t n_nontarget,
                     std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> tar, non;
  for (std::size_t i = 0; i < enroll.size(); ++i)
    for (std::size_t j = 0; j < test.size(); ++j) {
      if (enroll[i].utt_id == test[j].utt_id) continue;
      (enroll[i].speaker_id == test[j].speaker_id ? tar : non).emplace_back(i, j);
    }
  if (n_target > tar.size() || n_nontarget > non.size())
    throw ConfigError("cannot draw " + std::to_string(n_target) + " target / " + std::to_string(n_nontarget) +
                      " nontarget trials; only " + std::to_string(tar.size()) + " / " + std::to_string(non.size()) +
                      " pairs exist");
  std::mt19937_64 rng(seed);
  std::shuffle(tar.begin(), tar.end(), rng);
  std::shuffle(non.begin(), non.end(), rng);
  TrialList trials;
  for (std::size_t k = 0; k < n_target; ++k)
    trials.push_back({enroll[tar[k].first].utt_id, test[tar[k].second].utt_id, TrialLabel::kTarget});
  for (std::size_t k = 0; k < n_nontarget; ++k)
    trials.push_back({enroll[non[k].first].utt_id, test[non[k].second].utt_id, TrialLabel::kNontarget});
  std::shuffle(trials.begin(), trials.end(), rng);
  return trials;
}

SyntheticSpeakerSpec MakeSpeakerSpec(const std::string& speaker_id, int domain, std::uint64_t corpus_seed,
                                     int candidate) {
  if (domain != 0 && domain != 1) throw ConfigError("synthetic domain must be 0 or 1");
  if (candidate < 0) throw ConfigError("candidate index must be >= 0");
  SyntheticSpeakerSpec spec;
  spec.domain = domain;
  spec.seed = MixSeed(corpus_seed, Fnv1a(speaker_id) + static_cast<std::uint64_t>(domain));
  if (candidate > 0) spec.seed = MixSeed(spec.seed, static_cast<std::uint64_t>(candidate));
  std::mt19937_64 rng(spec.seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto log_uni = [&](double lo, double hi) { return std::exp(uni(std::log(lo), std::log(hi))); };
  static const double kBands[5][2] = {{250, 900}, {900, 2100}, {2100, 2900}, {2900, 3400}, {3400, 3700}};
  const int n = std::uniform_int_distribution<int>(3, 5)(rng);
  for (int k = 0; k < n; ++k) {
    spec.resonances_hz.push_back(log_uni(kBands[k][0], kBands[k][1]));
    spec.bandwidths_hz.push_back(uni(50.0, 160.0) * (1.0 + 0.4 * k));
  }
  spec.pitch_hz = log_uni(85.0, 260.0);
  spec.tilt = uni(0.3, 0.85);
  return spec;
}

double SpeakerDistance(const SyntheticSpeakerSpec& a, const SyntheticSpeakerSpec& b) {
  auto sq = [](double x) { return x * x; };
  double d = sq(std::log(a.pitch_hz / b.pitch_hz) / std::log(260.0 / 85.0)) + sq((a.tilt - b.tilt) / 0.55);
  static const double kSpan[3] = {std::log(900.0 / 250.0), std::log(2100.0 / 900.0), std::log(2900.0 / 2100.0)};
  for (int k = 0; k < 3; ++k) d += sq(std::log(a.resonances_hz[k] / b.resonances_hz[k]) / kSpan[k]);
  return std::sqrt(d);
}

std::vector<SyntheticSpeakerSpec> MakeSpeakerSpecs(const std::vector<std::string>& speaker_ids, int domain,
                                                   std::uint64_t corpus_seed, int candidates) {
  if (candidates < 1) throw ConfigError("need at least one candidate per speaker");
  std::vector<SyntheticSpeakerSpec> specs;
  for (const auto& id : speaker_ids) {
    SyntheticSpeakerSpec best;
    double best_d = -1.0;
    for (int c = 0; c < candidates; ++c) {
      SyntheticSpeakerSpec spec = MakeSpeakerSpec(id, domain, corpus_seed, c);
      double d = std::numeric_limits<double>::infinity();
      for (const auto& prev : specs) d = std::min(d, SpeakerDistance(spec, prev));
      if (d > best_d) {
        best_d = d;
        best = std::move(spec);
      }
      if (specs.empty()) break;
    }
    specs.push_back(std::move(best));
  }
  return specs;
}

void CheckSpeakerSpec(const SyntheticSpeakerSpec& spec) {
  const std::size_t n = spec.resonances_hz.size();
  if (n < 3 || n > 5) throw ConfigError("a synthetic speaker needs 3 to 5 resonances");
  if (spec.bandwidths_hz.size() != n) throw ConfigError("one bandwidth per resonance is required");
  for (std::size_t k = 0; k < n; ++k) {
    if (!(spec.resonances_hz[k] >= 100.0 && spec.resonances_hz[k] <= 3700.0))
      throw ConfigError("resonance outside [100, 3700] Hz");
    if (!(spec.bandwidths_hz[k] > 0.0)) throw ConfigError("bandwidth must be positive");
  }
  if (!(spec.pitch_hz >= 50.0 && spec.pitch_hz <= 400.0)) throw ConfigError("pitch outside [50, 400] Hz");
  if (!(spec.tilt >= 0.0 && spec.tilt < 1.0)) throw ConfigError("tilt must lie in [0, 1)");
}

Waveform SynthesizeUtterance(const SyntheticSpeakerSpec& spec, int utt_index, double duration_s) {
  CheckSpeakerSpec(spec);
  if (!(duration_s > 0.0)) throw ConfigError("duration must be positive");
  const Index n = static_cast<Index>(std::llround(duration_s * kSampleRate));
  if (n < 200) throw ConfigError("duration shorter than one analysis frame");
  std::mt19937_64 rng(MixSeed(spec.seed, static_cast<std::uint64_t>(utt_index) + 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const bool breathy = spec.domain == 1;
  const double jitter = breathy ? 0.04 : 0.01;
  const double aspiration = breathy ? 0.25 : 0.03;
  const double pitch = spec.pitch_hz * std::exp(0.04 * gauss(rng));

  std::vector<Resonator> tract(spec.resonances_hz.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  double phase = 0.0, period_scale = 1.0, tilt_state = 0.0;
  Index t = static_cast<Index>(uni(0.02, 0.15) * kSampleRate);
  while (t < n) {
    const Index len = std::min<Index>(static_cast<Index>(uni(0.12, 0.35) * kSampleRate), n - t);
    const double gain = uni(0.6, 1.0);
    const double contour = uni(-0.08, 0.08);
    for (std::size_t k = 0; k < tract.size(); ++k) {
      const double f = std::clamp(spec.resonances_hz[k] * (1.0 + uni(-0.06, 0.06)), 100.0, 3700.0);
      tract[k].Set(f, spec.bandwidths_hz[k]);
    }
    for (Index i = 0; i < len; ++i) {
      const double pos = static_cast<double>(i) / static_cast<double>(len);
      const double f0 = pitch * (1.0 + contour * (pos - 0.5));
      phase += f0 * period_scale / kSampleRate;
      double src = aspiration * gauss(rng);
      if (phase >= 1.0) {
        phase -= 1.0;
        src += 1.0;
        period_scale = 1.0 + jitter * gauss(rng);
      }
      tilt_state = src + spec.tilt * tilt_state;
      double y = tilt_state;
      for (auto& r : tract) y = r.Step(y);
      out[t + i] = gain * std::sin(kPi * pos) * y;
    }
    t += len + static_cast<Index>(uni(0.05, 0.2) * kSampleRate);
  }
  if (breathy) {
    // band-limited channel: one-pole highpass then a second-order lowpass near 3 kHz
    Resonator lowpass;
    lowpass.Set(2800.0, 1200.0);
    double prev_x = 0.0, hp = 0.0;
    const double c = std::exp(-2.0 * kPi * 300.0 / kSampleRate);
    for (Index i = 0; i < n; ++i) {
      hp = c * (hp + out[i] - prev_x);
      prev_x = out[i];
      out[i] = lowpass.Step(hp);
    }
  }
  const double peak = out.cwiseAbs().maxCoeff();
  if (peak > 0.0) out *= 0.5 / peak;
  for (Index i = 0; i < n; ++i) out[i] += 1e-4 * gauss(rng);
  Waveform w;
  w.samples = std::move(out);
  return w;
}

void CheckSynthConfig(const SynthConfig& cfg) {
  if (cfg.n_speakers < 2) throw ConfigError("synthetic corpus needs at least 2 speakers");
  if (cfg.utts_per_speaker < 1) throw ConfigError("synthetic corpus needs at least 1 utterance per speaker");
  if (!(cfg.duration_s * kSampleRate >= 200.0)) throw ConfigError("utterance duration shorter than one frame");
  if (cfg.domain != 0 && cfg.domain != 1) throw ConfigError("synthetic domain must be 0 or 1");
  if (!IsValidSubset(cfg.subset)) throw ConfigError("bad subset '" + cfg.subset + "'");
  if (cfg.first_index < 0) throw ConfigError("first_index must be >= 0");
}

Manifest GenerateSyntheticCorpus(const SynthConfig& cfg, const std::string& wav_dir) {
  CheckSynthConfig(cfg);
  if (!wav_dir.empty()) std::filesystem::create_directories(wav_dir);
  Manifest m;
  char buf[64];
  std::vector<std::string> ids;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    std::snprintf(buf, sizeof(buf), "%03d", cfg.first_index + s);
    ids.push_back(cfg.speaker_prefix + buf);
  }
  const auto specs = MakeSpeakerSpecs(ids, cfg.domain, cfg.seed);
  for (int s = 0; s < cfg.n_speakers; ++s) {
    const std::string& spk = ids[static_cast<std::size_t>(s)];
    const SyntheticSpeakerSpec& spec = specs[static_cast<std::size_t>(s)];
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      std::snprintf(buf, sizeof(buf), "-u%02d", u);
      const std::string utt = spk + buf;
      const std::string path = wav_dir.empty() ? utt + ".wav" : (std::filesystem::path(wav_dir) / (utt + ".wav")).string();
      if (!wav_dir.empty()) WriteWav(path, SynthesizeUtterance(spec, u, cfg.duration_s));
      m.push_back({utt, path, spk, cfg.subset});
    }
  }
  return m;
}

}  // namespace spkv
