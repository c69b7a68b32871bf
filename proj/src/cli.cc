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

#include "spkv/cli.h"

#include <malloc.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <streambuf>

#include "CLI11.hpp"
#include "spkv/augment.h"
#include "spkv/backend.h"
#include "spkv/checkpoint.h"
#include "spkv/config.h"
#include "spkv/corpus.h"
#include "spkv/errors.h"
#include "spkv/frontend.h"
#include "spkv/scoring.h"
#include "spkv/trainer.h"

namespace spkv {

namespace fs = std::filesystem;

namespace {

// Duplicates everything written to it into two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const char ch = static_cast<char>(c);
    return a_->sputc(ch) == traits_type::eof() || b_->sputc(ch) == traits_type::eof() ? traits_type::eof() : c;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    a_->sputn(s, n);
    return b_->sputn(s, n);
  }
  int sync() override { return a_->pubsync() | b_->pubsync(); }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct GlobalOptions {
  std::string config_path;
  std::string workdir;
  std::vector<std::string> sets;
  int workers = 0;
};

RunConfig LoadConfig(const GlobalOptions& g) {
  std::vector<ConfigEntry> entries;
  if (!g.config_path.empty()) entries = ReadConfigFile(g.config_path);
  if (!g.workdir.empty()) entries.push_back({"workdir", g.workdir, "<command line>"});
  if (g.workers > 0) entries.push_back({"workers", std::to_string(g.workers), "<command line>"});
  for (const auto& s : g.sets) entries.push_back(ParseOverride(s));
  return BuildRunConfig(entries);
}

void RecordConfig(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.workdir);
  std::ofstream out(cfg.Path("resolved.cfg"));
  if (!out) throw IoError("cannot write " + cfg.Path("resolved.cfg"));
  out << "# resolved configuration of the last `spkv " << command << "` run\n" << DumpRunConfig(cfg);
}

std::string EnsureDir(const RunConfig& cfg, const std::string& rel) {
  const std::string dir = cfg.Path(rel);
  fs::create_directories(dir);
  return dir;
}

std::string ParentDirOf(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
  return path;
}

std::uint64_t HashText(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

// Feature files live under feats/<hash of the frontend settings>/.
class FeatureCache {
 public:
  explicit FeatureCache(const RunConfig& cfg) : pipeline_(cfg.pipeline) {
    std::string key;
    std::istringstream in(DumpRunConfig(cfg));
    for (std::string line; std::getline(in, line);)
      if (line.rfind("frontend.", 0) == 0 || line.rfind("vad.", 0) == 0 || line.rfind("cmn.", 0) == 0) key += line;
    char tag[32];
    std::snprintf(tag, sizeof(tag), "%016llx", static_cast<unsigned long long>(HashText(key)));
    dir_ = cfg.Path(std::string("feats/") + tag);
    fs::create_directories(dir_);
  }

  Eigen::MatrixXd Get(const ManifestEntry& e) const {
    const std::string path = (fs::path(dir_) / (e.utt_id + ".feat")).string();
    if (fs::exists(path)) return ReadFeatureFile(path);
    Eigen::MatrixXd feats = ExtractFeatures(ReadWav(e.path), pipeline_).frames;
    if (feats.rows() == 0) throw EmptyFeaturesError("utterance '" + e.utt_id + "' has no voiced frames");
    WriteFeatureFile(path, feats);
    return feats;
  }

 private:
  PipelineConfig pipeline_;
  std::string dir_;
};

Manifest ReadRequiredManifest(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " manifest not found: " + path);
  return ReadManifest(path);
}

template <typename F>
auto WithPrecision(Precision p, F&& f) {
  if (p == Precision::kDouble) return f(double{});
  return f(float{});
}

// ---- synth ----------------------------------------------------------------

int CmdSynth(const RunConfig& cfg, std::ostream& out) {
  const auto& plan = cfg.synth;
  EnsureDir(cfg, "manifests");
  const std::string train_dir = fs::absolute(cfg.Path("corpus/train")).string();
  const std::string eval_dir = fs::absolute(cfg.Path("corpus/eval")).string();
  const int n_a = plan.speakers - plan.domain_b_speakers;

  Manifest stage1, stage2;
  if (n_a > 0) {
    SynthConfig a{n_a, plan.utts, plan.duration_s, cfg.seed, 0, "spk", "train", 0};
    stage1 = GenerateSyntheticCorpus(a, train_dir);
  }
  SynthConfig b{plan.domain_b_speakers, plan.utts, plan.duration_s, cfg.seed, 1, "spk", "train", n_a};
  stage2 = GenerateSyntheticCorpus(b, train_dir);
  stage1.insert(stage1.end(), stage2.begin(), stage2.end());

  SynthConfig e{plan.eval_speakers, plan.eval_utts, plan.duration_s, MixSeed(cfg.seed, 0xE7A1), 1, "evl", "test", 0};
  Manifest eval = GenerateSyntheticCorpus(e, eval_dir);
  Manifest enroll, test;
  std::map<std::string, int> seen;
  for (auto& entry : eval) {
    if (seen[entry.speaker_id]++ < plan.eval_enroll) {
      entry.subset = "enroll";
      enroll.push_back(entry);
    } else {
      test.push_back(entry);
    }
  }
  const TrialList trials = MakeTrials(enroll, test, static_cast<std::size_t>(plan.trials_target),
                                      static_cast<std::size_t>(plan.trials_nontarget), MixSeed(cfg.seed, 0x7121A1));
  WriteManifest(cfg.Path("manifests/stage1.tsv"), stage1);
  WriteManifest(cfg.Path("manifests/stage2.tsv"), stage2);
  WriteManifest(cfg.Path("manifests/enroll.tsv"), enroll);
  WriteManifest(cfg.Path("manifests/test.tsv"), test);
  WriteTrials(cfg.Path("manifests/trials.txt"), trials);
  out << "synth: " << stage1.size() << " training utterances (" << plan.speakers << " speakers, "
      << plan.domain_b_speakers << " in the second domain), " << enroll.size() << " enroll / " << test.size()
      << " test utterances, " << trials.size() << " trials\n";
  return kExitOk;
}

// ---- augment --------------------------------------------------------------

int CmdAugment(const RunConfig& cfg, const std::string& in_rel, std::string out_rel, std::ostream& out) {
  const std::string in_path = cfg.Path(in_rel.empty() ? cfg.stage1.manifest : in_rel);
  const Manifest input = ReadRequiredManifest(in_path, "augmentation input");
  if (out_rel.empty()) out_rel = (fs::path(in_path).parent_path() / (fs::path(in_path).stem().string() + "_aug.tsv")).string();
  const std::string out_path = cfg.Path(out_rel);
  const std::string wav_dir = fs::absolute(cfg.Path("corpus/aug")).string();
  fs::create_directories(wav_dir);

  AugmentSources sources;
  for (int i = 0; i < 4; ++i) {
    sources.rirs.push_back(SyntheticRir(0.2 + 0.2 * i, MixSeed(cfg.seed, 0x5100 + i)));
    sources.music.push_back(SyntheticMusic(10.0, MixSeed(cfg.seed, 0x5200 + i)));
    sources.noises.push_back(SyntheticNoise(10.0, MixSeed(cfg.seed, 0x5300 + i)));
  }
  std::vector<Waveform> waves;
  for (const auto& e : input) waves.push_back(ReadWav(e.path));
  sources.speech = waves;

  Manifest result = input;
  std::map<AugmentKind, int> counts;
  const std::string log_path = cfg.Path("reports/augment.log");
  std::ofstream log(ParentDirOf(log_path));
  if (!log) throw IoError("cannot write " + log_path);
  for (std::size_t i = 0; i < input.size(); ++i) {
    for (int k = 0; k < cfg.augment_copies; ++k) {
      const std::uint64_t seed = MixSeed(cfg.seed, HashText(input[i].utt_id) + static_cast<std::uint64_t>(k));
      const AugmentKind kind = cfg.augment_kinds[seed % cfg.augment_kinds.size()];
      const Waveform aug = Augment(waves[i], DefaultAugmentSpec(kind, seed), sources);
      ManifestEntry entry = input[i];
      entry.utt_id += "-" + ToString(kind) + std::to_string(k);
      entry.path = (fs::path(wav_dir) / (entry.utt_id + ".wav")).string();
      WriteWav(entry.path, aug);
      log << entry.utt_id << ' ' << ToString(kind) << ' ' << seed << '\n';
      result.push_back(entry);
      ++counts[kind];
    }
  }
  WriteManifest(ParentDirOf(out_path), result);
  out << "augment: " << input.size() << " utterances -> " << result.size() << " entries in " << out_path << " (";
  bool first = true;
  for (const auto& [kind, n] : counts) {
    out << (first ? "" : ", ") << ToString(kind) << "=" << n;
    first = false;
  }
  out << ")\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

TrainingCorpus LoadTrainingCorpus(const RunConfig& cfg, const Manifest& manifest, std::uint64_t split_seed,
                                  std::ostream& log) {
  auto [train_m, valid_m] = SplitManifest(manifest, cfg.synth.valid_fraction, split_seed);
  TrainingCorpus corpus;
  corpus.speakers = ManifestSpeakers(manifest);
  std::map<std::string, int> label;
  for (std::size_t i = 0; i < corpus.speakers.size(); ++i) label[corpus.speakers[i]] = static_cast<int>(i);
  const FeatureCache cache(cfg);
  auto load = [&](const Manifest& m, std::vector<LabeledUtterance>& dst) {
    for (const auto& e : m) {
      try {
        dst.push_back({e.utt_id, label.at(e.speaker_id), cache.Get(e)});
      } catch (const EmptyFeaturesError& ex) {
        log << "skip: " << ex.what() << '\n';
      }
    }
  };
  load(train_m, corpus.train);
  load(valid_m, corpus.valid);
  return corpus;
}

int CmdTrain(const RunConfig& cfg, int stage, std::ostream& out) {
  const StageSettings& st = stage == 1 ? cfg.stage1 : cfg.stage2;
  const std::string init_path = cfg.Path(cfg.stage2_init);
  if (stage == 2 && !fs::exists(init_path))
    throw ConfigError("stage-2 initialization checkpoint not found: " + init_path +
                      " (run `spkv train --stage 1` first or set train.stage2.init)");
  const Manifest manifest = ReadRequiredManifest(cfg.Path(st.manifest), stage == 1 ? "stage-1" : "stage-2");
  EnsureDir(cfg, "ckpt");
  const std::string log_path = cfg.Path("reports/train_stage" + std::to_string(stage) + ".log");
  std::ofstream log_file(ParentDirOf(log_path));
  if (!log_file) throw IoError("cannot write " + log_path);
  TeeBuf tee_buf(out.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee_buf);

  const TrainingCorpus corpus = LoadTrainingCorpus(cfg, manifest, MixSeed(cfg.seed, 0x5B117 + stage), log);
  log << "stage " << stage << ": " << corpus.speakers.size() << " speakers, " << corpus.train.size()
      << " training / " << corpus.valid.size() << " validation utterances\n";

  return WithPrecision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    TrainState<S> state;
    if (stage == 1) {
      state = InitialState<S>(cfg.Arch(), corpus.speakers, st.cfg);
    } else {
      const TrainState<S> base = LoadTrainState<S>(init_path);
      state = RefinementState(base, corpus.speakers, st.cfg);
      log << "stage 2: backbone and " << corpus.speakers.size() << " classifier rows taken from " << init_path << '\n';
    }
    log << "model: " << state.model.num_parameters() << " backbone parameters, embedding dim "
        << state.head.dim() << '\n';
    const StageResult r = RunStage(st.cfg, corpus, state, &log);
    log << "stage " << stage << " done: " << r.iterations << " iterations, loss " << r.first_loss << " -> "
        << r.last_loss << ", best validation loss " << r.best_valid_loss << " at iteration " << r.best_iteration
        << " (" << r.stop_reason << ")\n";
    log.flush();
    return kExitOk;
  });
}

// ---- reparam --------------------------------------------------------------

int CmdReparam(const RunConfig& cfg, const std::string& in_rel, const std::string& out_rel, std::ostream& out) {
  const std::string in_path = cfg.Path(in_rel), out_path = cfg.Path(out_rel);
  if (!fs::exists(in_path)) throw ConfigError("checkpoint not found: " + in_path);
  return WithPrecision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    TrainState<S> state = LoadTrainState<S>(in_path);
    state.model.mode = Mode::kEval;
    const auto before = state.model.num_parameters();
    state.model = Reparameterize(state.model);
    SaveTrainState(ParentDirOf(out_path), state);
    out << "reparam: " << before << " -> " << state.model.num_parameters() << " parameters, wrote " << out_path
        << '\n';
    return kExitOk;
  });
}

// ---- extract --------------------------------------------------------------

int CmdExtract(const RunConfig& cfg, const std::string& ckpt_rel, std::vector<std::string> manifests,
               const std::string& out_rel, std::ostream& out, std::ostream& err) {
  const std::string ckpt = cfg.Path(ckpt_rel);
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint not found: " + ckpt);
  if (manifests.empty()) manifests = {"manifests/enroll.tsv", "manifests/test.tsv"};
  Manifest all;
  for (const auto& m : manifests) {
    const Manifest part = ReadRequiredManifest(cfg.Path(m), "extraction");
    all.insert(all.end(), part.begin(), part.end());
  }
  CheckManifest(all);
  const FeatureCache cache(cfg);
  EmbeddingStore store = WithPrecision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    TrainState<S> state = LoadTrainState<S>(ckpt);
    state.model.mode = Mode::kEval;
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(all.size())));
    auto run = [&](int w, BackboneModel<S> model) {
      std::vector<std::pair<std::string, Eigen::VectorXd>> part;
      std::vector<std::string> skipped;
      for (std::size_t i = static_cast<std::size_t>(w); i < all.size(); i += static_cast<std::size_t>(workers)) {
        try {
          part.emplace_back(all[i].utt_id, EmbedFeatures(model, cache.Get(all[i])));
        } catch (const EmptyFeaturesError& ex) {
          skipped.push_back(ex.what());
        } catch (const LengthError& ex) {
          skipped.push_back(all[i].utt_id + ": " + ex.what());
        }
      }
      return std::make_pair(part, skipped);
    };
    std::vector<std::future<decltype(run(0, state.model))>> jobs;
    for (int w = 0; w < workers; ++w)
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run, w,
                                state.model.Clone()));
    EmbeddingStore s;
    for (auto& j : jobs) {
      auto [part, skipped] = j.get();
      for (auto& [id, v] : part) s.emplace(id, std::move(v));
      for (const auto& msg : skipped) err << "skip: " << msg << '\n';
    }
    return s;
  });
  const std::string out_path = cfg.Path(out_rel);
  WriteEmbeddings(ParentDirOf(out_path), store);
  out << "extract: " << store.size() << " embeddings from " << all.size() << " utterances -> " << out_path << '\n';
  return kExitOk;
}

// ---- score ----------------------------------------------------------------

EnrollMap ReadEnrollMap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("enrollment map not found: " + path);
  EnrollMap map;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    std::istringstream ss(line);
    std::string model, utt;
    if (!(ss >> model) || model[0] == '#') continue;
    auto& utts = map[model];
    while (ss >> utt) utts.push_back(utt);
    if (utts.empty()) throw FormatError(path + ":" + std::to_string(lineno) + ": model '" + model + "' lists no utterances");
  }
  return map;
}

int CmdScore(const RunConfig& cfg, const std::string& trials_rel, const std::string& emb_rel,
             const std::string& enroll_rel, const std::string& out_rel, std::ostream& out) {
  const std::string trials_path = cfg.Path(trials_rel), emb_path = cfg.Path(emb_rel);
  if (!fs::exists(trials_path)) throw ConfigError("trial list not found: " + trials_path);
  if (!fs::exists(emb_path)) throw ConfigError("embedding store not found: " + emb_path);
  const EnrollMap enroll = enroll_rel.empty() ? EnrollMap{} : ReadEnrollMap(cfg.Path(enroll_rel));
  const ScoreSet set = ScoreTrials(ReadTrials(trials_path), ReadEmbeddings(emb_path), enroll);
  const std::string out_path = cfg.Path(out_rel);
  WriteScores(ParentDirOf(out_path), set);
  out << "score: " << set.size() << " trials -> " << out_path << '\n';
  return kExitOk;
}

// ---- calibrate / fuse / evaluate -------------------------------------------

ScoreSet ReadRequiredScores(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("score file not found: " + path);
  return ReadScores(path);
}

int CmdCalibrate(const RunConfig& cfg, const std::string& dev_rel, std::string in_rel, std::string out_rel,
                 const std::string& model_rel, std::ostream& out) {
  const std::string dev_path = cfg.Path(dev_rel);
  CalibrationOptions opt;
  opt.prior = cfg.calibration_prior;
  const CalibrationModel model = CalibrateFit(ReadRequiredScores(dev_path), opt);
  const std::string model_path = cfg.Path(model_rel);
  WriteCalibration(ParentDirOf(model_path), model);
  if (in_rel.empty()) in_rel = dev_rel;
  const std::string in_path = cfg.Path(in_rel);
  if (out_rel.empty())
    out_rel = (fs::path(in_path).parent_path() / (fs::path(in_path).stem().string() + "_cal.txt")).string();
  const std::string out_path = cfg.Path(out_rel);
  WriteScores(ParentDirOf(out_path), ApplyCalibration(ReadRequiredScores(in_path), model));
  char line[256];
  std::snprintf(line, sizeof(line), "calibrate: a=%.6f b=%.6f (%d Newton steps, |grad|=%.2e)\n", model.a, model.b,
                model.iterations, model.gradient_norm);
  out << line << "calibrate: " << in_path << " -> " << out_path << '\n';
  return kExitOk;
}

int CmdFuse(const RunConfig& cfg, const std::vector<std::string>& inputs, const std::string& out_rel,
            std::ostream& out) {
  std::vector<ScoreSet> systems;
  for (const auto& in : inputs) systems.push_back(ReadRequiredScores(cfg.Path(in)));
  const ScoreSet fused = Fuse(systems);
  const std::string out_path = cfg.Path(out_rel);
  WriteScores(ParentDirOf(out_path), fused);
  out << "fuse: " << systems.size() << " systems, " << fused.size() << " trials -> " << out_path << '\n';
  return kExitOk;
}

int CmdEvaluate(const RunConfig& cfg, std::vector<std::string> inputs, const std::string& report_rel,
                std::ostream& out) {
  if (inputs.empty()) inputs = {"scores/system.txt"};
  std::vector<SystemMetrics> rows;
  for (const auto& in : inputs) {
    const std::string path = cfg.Path(in);
    rows.push_back(Evaluate(fs::path(path).stem().string(), ReadRequiredScores(path), cfg.dcf));
  }
  const std::string report = FormatReport(rows, cfg.dcf);
  out << report;
  const std::string report_path = cfg.Path(report_rel);
  std::ofstream file(ParentDirOf(report_path));
  if (!file) throw IoError("cannot write " + report_path);
  file << report;
  return kExitOk;
}

}  // namespace

void TuneAllocator() {
  // Activations are large, short-lived buffers; keeping them on the heap
  // instead of fresh mmap regions avoids page-fault churn on every op.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
}

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  TuneAllocator();
  CLI::App app{"spkv: speaker verification toolkit (8 kHz, log-mel, ResNet/RepVGG, combined-margin softmax)",
               "spkv"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "run configuration file (key = value lines)");
  app.add_option("-w,--workdir", g.workdir, "working directory (overrides the workdir key)");
  app.add_option("--set", g.sets, "override a configuration key, KEY=VALUE (repeatable)")
      ->allow_extra_args(false);
  app.add_option("--workers", g.workers, "data-loading / extraction worker count")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus, manifests and trial list");

  std::string aug_in, aug_out;
  auto* augment = app.add_subcommand("augment", "write augmented copies of a training manifest");
  augment->add_option("--in", aug_in, "input manifest (default: train.stage1.manifest)");
  augment->add_option("--out", aug_out, "output manifest (default: <in>_aug.tsv)");

  int stage = 1;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", stage, "1 = pre-training, 2 = in-domain refinement")
      ->required()
      ->check(CLI::IsMember({1, 2}));

  std::string rp_in = "ckpt/stage2_best.ckpt", rp_out = "ckpt/stage2_fused.ckpt";
  auto* reparam = app.add_subcommand("reparam", "fold a RepVGG checkpoint into single-branch form");
  reparam->add_option("--in", rp_in, "input checkpoint")->capture_default_str();
  reparam->add_option("--out", rp_out, "output checkpoint")->capture_default_str();

  std::string ex_ckpt = "ckpt/stage2_best.ckpt", ex_out = "emb/embeddings.emb";
  std::vector<std::string> ex_manifests;
  auto* extract = app.add_subcommand("extract", "extract embeddings for manifest utterances");
  extract->add_option("--checkpoint", ex_ckpt, "model checkpoint")->capture_default_str();
  extract->add_option("--manifest", ex_manifests, "manifest(s) (default: enroll and test manifests)")
      ->allow_extra_args(false);
  extract->add_option("--out", ex_out, "embedding store")->capture_default_str();

  std::string sc_trials = "manifests/trials.txt", sc_emb = "emb/embeddings.emb", sc_enroll,
              sc_out = "scores/system.txt";
  auto* score = app.add_subcommand("score", "cosine-score a trial list");
  score->add_option("--trials", sc_trials, "trial list")->capture_default_str();
  score->add_option("--embeddings", sc_emb, "embedding store")->capture_default_str();
  score->add_option("--enroll", sc_enroll, "enrollment map: model utt1 utt2 ...");
  score->add_option("--out", sc_out, "score file")->capture_default_str();

  std::string cal_dev = "scores/system.txt", cal_in, cal_out, cal_model = "reports/calibration.json";
  auto* calibrate = app.add_subcommand("calibrate", "fit logistic-regression calibration and apply it");
  calibrate->add_option("--dev", cal_dev, "labeled development scores")->capture_default_str();
  calibrate->add_option("--in", cal_in, "scores to calibrate (default: the dev scores)");
  calibrate->add_option("--out", cal_out, "calibrated scores (default: <in>_cal.txt)");
  calibrate->add_option("--model", cal_model, "calibration parameters")->capture_default_str();

  std::vector<std::string> fu_in;
  std::string fu_out = "scores/fused.txt";
  auto* fuse = app.add_subcommand("fuse", "equal-weight average of aligned score files");
  fuse->add_option("--in", fu_in, "score files (repeatable)")->required()
      ->allow_extra_args(false);
  fuse->add_option("--out", fu_out, "fused score file")->capture_default_str();

  std::vector<std::string> ev_in;
  std::string ev_report = "reports/report.txt";
  auto* evaluate = app.add_subcommand("evaluate", "EER, minDCF and actDCF of labeled score files");
  evaluate->add_option("--scores", ev_in, "score files (default: scores/system.txt)")
      ->allow_extra_args(false);
  evaluate->add_option("--report", ev_report, "report file")->capture_default_str();

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = LoadConfig(g);
    CLI::App* cmd = app.get_subcommands().front();
    RecordConfig(cfg, cmd->get_name());
    if (cmd == synth) return CmdSynth(cfg, out);
    if (cmd == augment) return CmdAugment(cfg, aug_in, aug_out, out);
    if (cmd == train) return CmdTrain(cfg, stage, out);
    if (cmd == reparam) return CmdReparam(cfg, rp_in, rp_out, out);
    if (cmd == extract) return CmdExtract(cfg, ex_ckpt, ex_manifests, ex_out, out, err);
    if (cmd == score) return CmdScore(cfg, sc_trials, sc_emb, sc_enroll, sc_out, out);
    if (cmd == calibrate) return CmdCalibrate(cfg, cal_dev, cal_in, cal_out, cal_model, out);
    if (cmd == fuse) return CmdFuse(cfg, fu_in, fu_out, out);
    if (cmd == evaluate) return CmdEvaluate(cfg, ev_in, ev_report, out);
  } catch (const Error& e) {
    err << "spkv: error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "spkv: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace spkv
