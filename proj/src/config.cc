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

#include "spkv/config.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "spkv/errors.h"

namespace spkv {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, ',');) out.push_back(Trim(p));
  return out;
}

// Value codecs. Parse throws std::invalid_argument; the caller anchors it.
void Parse(const std::string& s, std::string& out) { out = s; }

void Parse(const std::string& s, double& out) {
  std::size_t used = 0;
  out = std::stod(s, &used);
  if (used != s.size() || !std::isfinite(out)) throw std::invalid_argument("expected a finite number");
}

void Parse(const std::string& s, long& out) {
  std::size_t used = 0;
  out = std::stol(s, &used);
  if (used != s.size()) throw std::invalid_argument("expected an integer");
}

void Parse(const std::string& s, int& out) {
  long v = 0;
  Parse(s, v);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw std::invalid_argument("integer out of range");
  out = static_cast<int>(v);
}

void Parse(const std::string& s, std::uint64_t& out) {
  std::size_t used = 0;
  if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer");
  out = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("expected a non-negative integer");
}

void Parse(const std::string& s, bool& out) {
  if (s == "true" || s == "1") out = true;
  else if (s == "false" || s == "0") out = false;
  else throw std::invalid_argument("expected true or false");
}

template <std::size_t N>
void Parse(const std::string& s, std::array<int, N>& out) {
  const auto parts = SplitList(s);
  if (parts.size() != N) throw std::invalid_argument("expected " + std::to_string(N) + " comma-separated integers");
  for (std::size_t i = 0; i < N; ++i) Parse(parts[i], out[i]);
}

void Parse(const std::string& s, std::vector<double>& out) {
  out.clear();
  for (const auto& p : SplitList(s)) {
    double v = 0;
    Parse(p, v);
    out.push_back(v);
  }
}

std::string Format(const std::string& v) { return v; }
std::string Format(bool v) { return v ? "true" : "false"; }
std::string Format(int v) { return std::to_string(v); }
std::string Format(long v) { return std::to_string(v); }
std::string Format(std::uint64_t v) { return std::to_string(v); }

// shortest text that parses back to the same double
std::string Format(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <std::size_t N>
std::string Format(const std::array<int, N>& v) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string Format(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + Format(v[i]);
  return out;
}

struct KeyDef {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
KeyDef Bind(std::string key, std::function<T&(RunConfig&)> ref) {
  return {std::move(key), [ref](RunConfig& c, const std::string& v) { Parse(v, ref(c)); },
          [ref](const RunConfig& c) { return Format(ref(const_cast<RunConfig&>(c))); }};
}

#define SPKV_KEY(T, name, expr) Bind<T>(name, [](RunConfig& c) -> T& { return expr; })

void AddStageKeys(std::vector<KeyDef>& keys, const std::string& prefix, StageSettings RunConfig::*member) {
  auto stage = [member](RunConfig& c) -> StageSettings& { return c.*member; };
  auto field = [&](const std::string& name, auto accessor) {
    using T = std::remove_reference_t<decltype(accessor(std::declval<StageSettings&>()))>;
    keys.push_back(Bind<T>(prefix + name, [stage, accessor](RunConfig& c) -> T& { return accessor(stage(c)); }));
  };
  field("manifest", [](StageSettings& s) -> std::string& { return s.manifest; });
  field("batch_size", [](StageSettings& s) -> int& { return s.cfg.batch_size; });
  field("chunk_frames", [](StageSettings& s) -> int& { return s.cfg.chunk_frames; });
  field("max_iters", [](StageSettings& s) -> long& { return s.cfg.max_iters; });
  field("validate_every", [](StageSettings& s) -> long& { return s.cfg.validate_every; });
  field("log_every", [](StageSettings& s) -> long& { return s.cfg.log_every; });
  field("lr", [](StageSettings& s) -> double& { return s.cfg.lr; });
  field("momentum", [](StageSettings& s) -> double& { return s.cfg.momentum; });
  field("patience", [](StageSettings& s) -> int& { return s.cfg.patience; });
  field("factor", [](StageSettings& s) -> double& { return s.cfg.factor; });
  field("min_lr", [](StageSettings& s) -> double& { return s.cfg.min_lr; });
  field("improve_threshold", [](StageSettings& s) -> double& { return s.cfg.improve_threshold; });
  field("scale", [](StageSettings& s) -> double& { return s.cfg.scale; });
  field("seed", [](StageSettings& s) -> std::uint64_t& { return s.cfg.seed; });
  keys.push_back({prefix + "m1", [stage](RunConfig& c, const std::string& v) { stage(c).m1 = v; },
                  [stage](const RunConfig& c) { return FormatSchedule(stage(const_cast<RunConfig&>(c)).cfg.m1); }});
  keys.push_back({prefix + "m2", [stage](RunConfig& c, const std::string& v) { stage(c).m2 = v; },
                  [stage](const RunConfig& c) { return FormatSchedule(stage(const_cast<RunConfig&>(c)).cfg.m2); }});
}

const std::vector<KeyDef>& KeyTable() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> k;
    k.push_back(SPKV_KEY(std::string, "workdir", c.workdir));
    k.push_back(SPKV_KEY(std::uint64_t, "seed", c.seed));
    k.push_back(SPKV_KEY(int, "workers", c.workers));

    k.push_back(SPKV_KEY(int, "synth.speakers", c.synth.speakers));
    k.push_back(SPKV_KEY(int, "synth.utts", c.synth.utts));
    k.push_back(SPKV_KEY(double, "synth.duration", c.synth.duration_s));
    k.push_back(SPKV_KEY(int, "synth.domain_b_speakers", c.synth.domain_b_speakers));
    k.push_back(SPKV_KEY(int, "synth.eval_speakers", c.synth.eval_speakers));
    k.push_back(SPKV_KEY(int, "synth.eval_utts", c.synth.eval_utts));
    k.push_back(SPKV_KEY(int, "synth.eval_enroll", c.synth.eval_enroll));
    k.push_back(SPKV_KEY(int, "synth.trials_target", c.synth.trials_target));
    k.push_back(SPKV_KEY(int, "synth.trials_nontarget", c.synth.trials_nontarget));
    k.push_back(SPKV_KEY(double, "synth.valid_fraction", c.synth.valid_fraction));

    k.push_back({"augment.kinds",
                 [](RunConfig& c, const std::string& v) {
                   c.augment_kinds.clear();
                   for (const auto& p : SplitList(v)) {
                     try {
                       c.augment_kinds.push_back(ParseAugmentKind(p));
                     } catch (const Error& e) {
                       throw std::invalid_argument(e.what());
                     }
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.augment_kinds.size(); ++i)
                     out += (i ? "," : "") + ToString(c.augment_kinds[i]);
                   return out;
                 }});
    k.push_back(SPKV_KEY(int, "augment.copies", c.augment_copies));

    k.push_back(SPKV_KEY(int, "frontend.num_mel_bins", c.pipeline.frontend.num_mel_bins));
    k.push_back(SPKV_KEY(double, "frontend.low_freq", c.pipeline.frontend.low_freq));
    k.push_back(SPKV_KEY(double, "frontend.high_freq", c.pipeline.frontend.high_freq));
    k.push_back(SPKV_KEY(double, "frontend.preemph", c.pipeline.frontend.preemph));
    k.push_back(SPKV_KEY(double, "frontend.log_floor", c.pipeline.frontend.log_floor));
    k.push_back(SPKV_KEY(bool, "frontend.remove_dc", c.pipeline.frontend.remove_dc));
    k.push_back({"frontend.window",
                 [](RunConfig& c, const std::string& v) {
                   auto& w = c.pipeline.frontend.window;
                   if (v == "hamming") w = WindowType::kHamming;
                   else if (v == "hanning") w = WindowType::kHanning;
                   else if (v == "povey") w = WindowType::kPovey;
                   else throw std::invalid_argument("expected hamming, hanning or povey");
                 },
                 [](const RunConfig& c) -> std::string {
                   switch (c.pipeline.frontend.window) {
                     case WindowType::kHanning: return "hanning";
                     case WindowType::kPovey: return "povey";
                     default: return "hamming";
                   }
                 }});
    k.push_back(SPKV_KEY(double, "vad.energy_threshold", c.pipeline.vad.energy_threshold));
    k.push_back(SPKV_KEY(double, "vad.mean_scale", c.pipeline.vad.mean_scale));
    k.push_back(SPKV_KEY(double, "vad.proportion", c.pipeline.vad.proportion));
    k.push_back(SPKV_KEY(int, "vad.context", c.pipeline.vad.context));
    k.push_back(SPKV_KEY(int, "cmn.window", c.pipeline.cmn_window));

    k.push_back({"model.arch",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "resnet" && v != "repvgg") throw std::invalid_argument("expected resnet or repvgg");
                   c.arch = v;
                 },
                 [](const RunConfig& c) { return c.arch; }});
    k.push_back({"model.precision",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "float") c.precision = Precision::kFloat;
                   else if (v == "double") c.precision = Precision::kDouble;
                   else throw std::invalid_argument("expected float or double");
                 },
                 [](const RunConfig& c) { return std::string(c.precision == Precision::kFloat ? "float" : "double"); }});
    k.push_back(SPKV_KEY(int, "model.resnet.base", c.resnet.base_channels));
    k.push_back(Bind<std::array<int, 4>>("model.resnet.blocks",
                                         [](RunConfig& c) -> std::array<int, 4>& { return c.resnet.block_counts; }));
    k.push_back(SPKV_KEY(int, "model.resnet.embedding_dim", c.resnet.embedding_dim));
    k.push_back(SPKV_KEY(int, "model.repvgg.base", c.repvgg.base_channels));
    k.push_back(Bind<std::array<int, 5>>("model.repvgg.depths",
                                         [](RunConfig& c) -> std::array<int, 5>& { return c.repvgg.stage_depths; }));
    k.push_back(SPKV_KEY(double, "model.repvgg.a", c.repvgg.width_a));
    k.push_back(SPKV_KEY(double, "model.repvgg.b", c.repvgg.width_b));
    k.push_back(SPKV_KEY(int, "model.repvgg.embedding_dim", c.repvgg.embedding_dim));

    AddStageKeys(k, "train.stage1.", &RunConfig::stage1);
    AddStageKeys(k, "train.stage2.", &RunConfig::stage2);
    k.push_back(SPKV_KEY(std::string, "train.stage2.init", c.stage2_init));

    k.push_back(SPKV_KEY(std::vector<double>, "dcf.priors", c.dcf.priors));
    k.push_back(SPKV_KEY(double, "dcf.c_miss", c.dcf.c_miss));
    k.push_back(SPKV_KEY(double, "dcf.c_fa", c.dcf.c_fa));
    k.push_back(SPKV_KEY(double, "calibration.prior", c.calibration_prior));
    return k;
  }();
  return table;
}

#undef SPKV_KEY

bool IsPresetKey(const std::string& key) { return key == "train.stage1.preset" || key == "train.stage2.preset"; }

void ApplyPreset(RunConfig& c, const ConfigEntry& e) {
  StageSettings& s = e.key == "train.stage1.preset" ? c.stage1 : c.stage2;
  if (e.value == "desk-stage1") s.cfg = StageConfig::DeskStage1();
  else if (e.value == "desk-stage2") s.cfg = StageConfig::DeskStage2();
  else if (e.value == "paper-stage1") s.cfg = StageConfig::PaperStage1();
  else if (e.value == "paper-stage2") s.cfg = StageConfig::PaperStage2();
  else
    throw ConfigError(e.where + ": " + e.key + ": unknown preset '" + e.value +
                      "' (expected desk-stage1, desk-stage2, paper-stage1 or paper-stage2)");
  s.m1.clear();
  s.m2.clear();
}

}  // namespace

ResNetConfig RunConfig::ToyResNet() {
  ResNetConfig c;
  c.base_channels = 8;
  c.block_counts = {1, 1, 1, 1};
  c.embedding_dim = 64;
  return c;
}

ArchConfig RunConfig::Arch() const {
  if (arch == "repvgg") return repvgg;
  return resnet;
}

std::string RunConfig::Path(const std::string& rel) const {
  const std::filesystem::path p(rel);
  if (p.is_absolute()) return rel;
  return (std::filesystem::path(workdir) / p).string();
}

std::vector<ConfigEntry> ParseConfigText(const std::string& text, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    ConfigEntry e{Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)), where};
    if (e.key.empty()) throw ConfigError(where + ": missing key");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> ReadConfigFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseConfigText(ss.str(), path);
}

ConfigEntry ParseOverride(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || Trim(text.substr(0, eq)).empty())
    throw ConfigError("<command line>: override '" + text + "' must look like key=value");
  return {Trim(text.substr(0, eq)), Trim(text.substr(eq + 1)), "<command line>"};
}

RunConfig BuildRunConfig(const std::vector<ConfigEntry>& entries, RunConfig base) {
  std::map<std::string, const KeyDef*> index;
  for (const auto& k : KeyTable()) index.emplace(k.key, &k);
  RunConfig c = std::move(base);
  for (const auto& e : entries)
    if (IsPresetKey(e.key)) ApplyPreset(c, e);
  std::set<std::string> seeded;
  for (const auto& e : entries) {
    if (IsPresetKey(e.key)) continue;
    auto it = index.find(e.key);
    if (it == index.end()) throw ConfigError(e.where + ": unknown key '" + e.key + "'");
    try {
      it->second->set(c, e.value);
    } catch (const std::exception& ex) {
      throw ConfigError(e.where + ": " + e.key + " = '" + e.value + "': " + ex.what());
    }
    if (e.key == "train.stage1.seed" || e.key == "train.stage2.seed") seeded.insert(e.key);
  }
  for (auto [settings, name] : {std::pair{&c.stage1, "train.stage1."}, std::pair{&c.stage2, "train.stage2."}}) {
    const long warmup = std::max(1L, settings->cfg.max_iters / 4);
    auto where = [&](const char* k) {
      for (auto e = entries.rbegin(); e != entries.rend(); ++e)
        if (e->key == std::string(name) + k) return e->where;
      return std::string("<config>");
    };
    try {
      if (!settings->m1.empty()) settings->cfg.m1 = ParseSchedule(settings->m1, warmup);
    } catch (const Error& ex) {
      throw ConfigError(where("m1") + ": " + name + "m1: " + ex.what());
    }
    try {
      if (!settings->m2.empty()) settings->cfg.m2 = ParseSchedule(settings->m2, warmup);
    } catch (const Error& ex) {
      throw ConfigError(where("m2") + ": " + name + "m2: " + ex.what());
    }
    settings->m1.clear();
    settings->m2.clear();
    if (!seeded.count(std::string(name) + "seed")) settings->cfg.seed = MixSeed(c.seed, settings->cfg.stage);
    settings->cfg.workers = c.workers;
    settings->cfg.checkpoint_dir = c.Path("ckpt");
  }
  c.resnet.feat_dim = c.pipeline.frontend.num_mel_bins;
  c.repvgg.feat_dim = c.pipeline.frontend.num_mel_bins;
  ValidateRunConfig(c);
  return c;
}

void ValidateRunConfig(const RunConfig& c) {
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError("config: " + key + ": " + msg); };
  if (c.workdir.empty()) fail("workdir", "must not be empty");
  if (c.workers < 1) fail("workers", "must be >= 1");
  const auto& s = c.synth;
  if (s.speakers < 2) fail("synth.speakers", "must be >= 2");
  if (s.utts < 2) fail("synth.utts", "must be >= 2");
  if (!(s.duration_s * kSampleRate >= 200.0)) fail("synth.duration", "shorter than one frame");
  if (s.domain_b_speakers < 1 || s.domain_b_speakers > s.speakers)
    fail("synth.domain_b_speakers", "must lie in [1, synth.speakers]");
  if (s.eval_speakers < 2) fail("synth.eval_speakers", "must be >= 2");
  if (s.eval_enroll < 1 || s.eval_enroll >= s.eval_utts) fail("synth.eval_enroll", "must lie in [1, synth.eval_utts)");
  if (s.trials_target < 0 || s.trials_nontarget < 0) fail("synth.trials_*", "must be >= 0");
  if (!(s.valid_fraction > 0.0 && s.valid_fraction < 1.0)) fail("synth.valid_fraction", "must lie in (0, 1)");
  if (c.augment_copies < 1) fail("augment.copies", "must be >= 1");
  if (c.augment_kinds.empty()) fail("augment.kinds", "must list at least one kind");
  const auto& fe = c.pipeline.frontend;
  if (fe.num_mel_bins < 1) fail("frontend.num_mel_bins", "must be >= 1");
  if (!(fe.low_freq >= 0.0 && fe.low_freq < fe.high_freq && fe.high_freq <= kSampleRate / 2.0))
    fail("frontend.low_freq/high_freq", "need 0 <= low < high <= 4000");
  if (!(fe.log_floor > 0.0)) fail("frontend.log_floor", "must be positive");
  if (!(c.pipeline.vad.proportion >= 0.0 && c.pipeline.vad.proportion <= 1.0)) fail("vad.proportion", "must lie in [0, 1]");
  if (c.pipeline.vad.context < 0) fail("vad.context", "must be >= 0");
  if (c.pipeline.cmn_window < 1) fail("cmn.window", "must be >= 1");
  const ArchConfig arch = c.Arch();
  try {
    ValidateConfig(arch);
  } catch (const Error& e) {
    fail("model." + c.arch, e.what());
  }
  const int min_frames = TotalStride(arch);
  for (auto [st, name] : {std::pair{&c.stage1, "train.stage1"}, std::pair{&c.stage2, "train.stage2"}}) {
    try {
      ValidateStageConfig(st->cfg, min_frames);
    } catch (const Error& e) {
      fail(name, e.what());
    }
  }
  if (c.stage1.cfg.stage != 1) fail("train.stage1.preset", "selects a stage-2 configuration");
  if (c.stage2.cfg.stage != 2) fail("train.stage2.preset", "selects a stage-1 configuration");
  try {
    CheckDcfParams(c.dcf);
  } catch (const Error& e) {
    fail("dcf", e.what());
  }
  if (!(c.calibration_prior > 0.0 && c.calibration_prior < 1.0)) fail("calibration.prior", "must lie in (0, 1)");
}

std::string DumpRunConfig(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : KeyTable()) out += k.key + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& k : KeyTable()) keys.push_back(k.key);
  keys.push_back("train.stage1.preset");
  keys.push_back("train.stage2.preset");
  return keys;
}

}  // namespace spkv
