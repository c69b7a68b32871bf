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

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. The end-to-end check drives the spkv binary.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.h"
#include "spkv/augment.h"
#include "spkv/backend.h"
#include "spkv/checkpoint.h"
#include "spkv/corpus.h"
#include "spkv/frontend.h"
#include "spkv/loss.h"
#include "spkv/nets.h"
#include "spkv/scoring.h"
#include "spkv/trainer.h"

namespace spkv {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures; the first few are kept for the report line.
class Check {
 public:
  void Expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome Done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, summary + " | " + std::to_string(failures_) + " failure(s): " + notes_};
  }

 private:
  int failures_ = 0;
  std::string notes_;
};

std::string Fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string Fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

double Seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- gradients --------------------------------------------------------------

Outcome GradientSuite() {
  const auto t0 = Clock::now();
  Check check;
  double worst_rel = 0.0, worst_abs = 0.0;
  std::size_t instances = 0, entries = 0, skipped = 0;
  for (const auto& name : testing::GradCaseNames()) {
    const int seeds = name == "toy_resnet" ? 10 : name == "toy_repvgg" ? 20 : 100;
    for (int s = 0; s < seeds; ++s) {
      const auto r = testing::RunGradCase(name, static_cast<std::uint64_t>(s));
      ++instances;
      entries += r.checked;
      skipped += r.skipped;
      worst_rel = std::max(worst_rel, r.max_rel);
      worst_abs = std::max(worst_abs, r.max_abs);
      check.Expect(r.Passed(1e-4), Fmt("%s seed %d rel %.2e at %s", name.c_str(), s, r.max_rel, r.worst.c_str()));
    }
  }
  const double secs = Seconds(t0);
  check.Expect(secs < 120.0, Fmt("runtime %.1f s", secs));
  return check.Done(Fmt("%zu cases, %zu instances, %zu entries (%zu on kinks), max rel %.2e, max abs %.2e, %.1f s",
                        testing::GradCaseNames().size(), instances, entries, skipped, worst_rel, worst_abs, secs));
}

// ---- re-parameterization ----------------------------------------------------

template <typename S>
void RandomizeBatchNorm(BackboneModel<S>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> g(0.0, 0.2);
  for (auto& [name, t] : model.params)
    if (name.find(".bn.") != std::string::npos)
      for (auto& v : t.value()) v = name.ends_with(".weight") ? u(rng) : g(rng);
  for (auto& [name, t] : model.buffers)
    for (auto& v : t.value()) v = name.ends_with("running_var") ? u(rng) : g(rng);
}

Eigen::MatrixXd RandomFeats(Index frames, Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd f(frames, dim);
  for (Index i = 0; i < f.size(); ++i) f.data()[i] = g(rng);
  return f;
}

Outcome ReparamSuite() {
  const auto t0 = Clock::now();
  Check check;
  RepVGGConfig c;
  c.base_channels = 8;
  c.stage_depths = {1, 1, 1, 1, 1};
  auto model = BuildRepVGG<double>(c, 1);
  RandomizeBatchNorm(model, 2);
  model.mode = Mode::kEval;
  auto fused = Reparameterize(model);
  double worst = 0.0;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(32, 160);
  for (int i = 0; i < 100; ++i) {
    const auto x = MakeInput<double>(RandomFeats(len(rng), c.feat_dim, 100 + static_cast<std::uint64_t>(i)));
    const auto a = ForwardEmbedding(model, x).value(), b = ForwardEmbedding(fused, x).value();
    worst = std::max(worst, (a - b).abs().maxCoeff());
  }
  const double secs = Seconds(t0);
  check.Expect(worst <= 1e-10, Fmt("max |diff| %.3e", worst));
  check.Expect(fused.num_parameters() < model.num_parameters(), "fused model is not smaller");
  check.Expect(secs < 60.0, Fmt("runtime %.1f s", secs));
  return check.Done(Fmt("toy RepVGG %zu -> %zu params, 100 inputs, max |diff| %.2e, %.1f s",
                        static_cast<std::size_t>(model.num_parameters()), static_cast<std::size_t>(fused.num_parameters()),
                        worst, secs));
}

// ---- loss -------------------------------------------------------------------

double Loss(const std::vector<double>& cos, int y, double s, double m1, double m2) {
  const Index k = static_cast<Index>(cos.size());
  Tensor<double> t({1, k}, Eigen::Map<const Eigen::ArrayXd>(cos.data(), k));
  return MarginSoftmaxCrossEntropy(t, {y}, s, m1, m2).item();
}

Outcome LossSuite() {
  Check check;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.99, 0.99), margin(0.0, 0.5), scale(4.0, 64.0);
  std::uniform_int_distribution<int> classes(2, 40);
  double worst_ce = 0.0;
  int monotone_cases = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> cos(static_cast<std::size_t>(classes(rng)));
    for (auto& v : cos) v = u(rng);
    const int y = static_cast<int>(rng() % cos.size());
    const double s = scale(rng);
    const double ce = static_cast<double>(testing::ReferenceMarginLoss(cos, y, s, cos[static_cast<std::size_t>(y)]));
    const double err = std::abs(Loss(cos, y, s, 0.0, 0.0) - ce);
    worst_ce = std::max(worst_ce, err);
    check.Expect(err <= 1e-12, Fmt("instance %d: |CE diff| %.2e", i, err));
    // raising either margin never lowers the loss
    const double m1 = margin(rng), m2 = margin(rng), d1 = margin(rng), d2 = margin(rng);
    const double base = Loss(cos, y, s, m1, m2);
    const double more1 = Loss(cos, y, s, m1 + d1, m2), more2 = Loss(cos, y, s, m1, m2 + d2);
    check.Expect(more1 >= base && more2 > base && base >= Loss(cos, y, s, 0.0, 0.0),
                 Fmt("instance %d not monotone", i));
    ++monotone_cases;
  }
  return check.Done(
      Fmt("zero-margin max |diff| vs softmax CE %.2e over 1000 instances, monotone in m1 and m2 on %d instances",
          worst_ce, monotone_cases));
}

// ---- metrics ----------------------------------------------------------------

Outcome MetricSuite() {
  const auto t0 = Clock::now();
  Check check;
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(2, 1000);
  std::normal_distribution<double> g;
  const DcfParams params;
  int sets = 0;
  for (int i = 0; i < 200; ++i) {
    const int n = size(rng);
    const int n_tar = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n - 1));
    const double quant = i % 2 == 0 ? 8.0 : 1e6;  // half of the sets carry many ties
    std::vector<double> tar, non;
    for (int k = 0; k < n; ++k) {
      const double v = std::round((g(rng) * 2.0 + (k < n_tar ? 2.0 : -1.0)) * quant) / quant;
      (k < n_tar ? tar : non).push_back(v);
    }
    const double eer = ComputeEer(tar, non), min_dcf = ComputeMinDcf(tar, non, params);
    check.Expect(eer == testing::BruteEer(tar, non), Fmt("set %d EER", i));
    check.Expect(min_dcf == testing::BruteMinDcf(tar, non, params.priors), Fmt("set %d minDCF", i));
    check.Expect(ComputeActDcf(tar, non, params) >= min_dcf, Fmt("set %d actDCF < minDCF", i));
    ++sets;
  }
  const double hand = ComputeEer({0.9, 0.8, 0.5}, {0.6, 0.2, 0.1});
  check.Expect(hand == 1.0 / 3.0, Fmt("hand EER %.17g", hand));
  const double secs = Seconds(t0);
  check.Expect(secs < 60.0, Fmt("runtime %.1f s", secs));
  return check.Done(Fmt("%d sets of 2..1000 trials match the brute-force sweep, actDCF >= minDCF, hand EER = %.17g, %.1f s",
                        sets, hand, secs));
}

// ---- schedules --------------------------------------------------------------

Outcome SchedulerSuite() {
  Check check;
  PlateauScheduler plateau;
  plateau.patience = 2;
  std::vector<double> trace;
  double lr = 0.05;
  for (double loss : {1.0, 1.0, 1.0, 1.0}) trace.push_back(lr = PlateauUpdate(plateau, lr, loss));
  check.Expect(trace == std::vector<double>{0.05, 0.05, 0.05, 0.025},
               Fmt("lr trace %g %g %g %g", trace[0], trace[1], trace[2], trace[3]));
  const auto exp = StageConfig::PaperStage2().m1;
  const double a = MarginAt(exp, 0), b = MarginAt(exp, 2000), c = MarginAt(exp, 4000);
  check.Expect(a == 0.2 && std::abs(b - 0.4) <= 1e-15 && c == 0.8, Fmt("m1 %.17g %.17g %.17g", a, b, c));
  return check.Done(Fmt("plateau lr trace 0.05,0.05,0.05,0.025; exp m1 %.6g/%.6g/%.6g at 0/2000/4000", a, b, c));
}

// ---- transplant -------------------------------------------------------------

Outcome TransplantSuite() {
  Check check;
  ResNetConfig arch;
  arch.base_channels = 4;
  arch.block_counts = {1, 1, 1, 1};
  arch.embedding_dim = 32;
  std::vector<std::string> speakers;
  for (int i = 0; i < 20; ++i) speakers.push_back(Fmt("spk%03d", i));
  auto base = InitialState<double>(arch, speakers, StageConfig::DeskStage1());
  RandomizeBatchNorm(base.model, 31);
  const std::vector<std::string> subset(speakers.begin() + 10, speakers.end());
  const auto refined = RefinementState(base, subset, StageConfig::DeskStage2());
  const auto rows = MapSpeakers(base.speakers, subset);
  const Index dim = base.head.dim();
  for (std::size_t i = 0; i < rows.size(); ++i)
    check.Expect((refined.head.weight.value().segment(static_cast<Index>(i) * dim, dim) ==
                  base.head.weight.value().segment(rows[i] * dim, dim)).all(),
                 Fmt("head row %zu", i));
  check.Expect(refined.head.num_classes() == static_cast<Index>(subset.size()), "head size");
  std::size_t tensors = 0;
  for (auto group : {&BackboneModel<double>::params, &BackboneModel<double>::buffers})
    for (const auto& [name, t] : base.model.*group) {
      const auto& other = (refined.model.*group).at(name).value();
      check.Expect(other.size() == t.value().size() && (other == t.value()).all(), "backbone tensor " + name);
      ++tensors;
    }
  return check.Done(Fmt("%zu head rows and %zu backbone tensors bit-equal", rows.size(), tensors));
}

// ---- calibration ------------------------------------------------------------

Outcome CalibrationSuite() {
  Check check;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> tar(2.0, 2.0), non(-2.0, 2.0);
  ScoreSet set;
  for (int i = 0; i < 10000; ++i) {
    const bool is_tar = i % 2 == 0;
    set.trials.push_back({Fmt("e%d", i), "t", is_tar ? TrialLabel::kTarget : TrialLabel::kNontarget});
    set.scores.push_back(is_tar ? tar(rng) : non(rng));
  }
  const auto model = CalibrateFit(set);
  const auto cal = ApplyCalibration(set, model);
  const double act = ComputeActDcf(cal), min = ComputeMinDcf(cal);
  check.Expect(std::abs(model.a - 1.0) <= 0.05 && std::abs(model.b) <= 0.05, Fmt("a %.4f b %.4f", model.a, model.b));
  check.Expect(act <= 1.5 * min, Fmt("actDCF %.4f vs minDCF %.4f", act, min));
  return check.Done(Fmt("a = %.4f, b = %.4f, calibrated actDCF %.4f <= 1.5 x minDCF %.4f", model.a, model.b, act, min));
}

// ---- frontend and augmentation ---------------------------------------------

Waveform Tone(double freq, double amp, Index n) {
  Waveform w;
  w.samples.resize(n);
  for (Index i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / kSampleRate);
  return w;
}

Waveform Noise(Index n, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Waveform w;
  w.samples.resize(n);
  for (auto& x : w.samples) x = std::clamp(g(rng), -1.0, 1.0);
  return w;
}

Outcome FrontendAugmentSuite() {
  Check check;
  const FrontendConfig fe;
  check.Expect(ComputeLogMel(Noise(8000, 1, 0.1)).frames.rows() == 98, "1 s does not give 98 frames");
  for (int n = 200; n <= 8200; n += 397)
    check.Expect(ComputeLogMel(Noise(n, static_cast<std::uint64_t>(n), 0.1)).frames.rows() == (n - 200) / 80 + 1,
                 Fmt("frame count at %d samples", n));

  FeatureMatrix f;
  f.frames = RandomFeats(700, 8, 51) * 3.0;
  f.frames.array() += 5.0;
  const auto cmn = SlidingCmn(f, 300);
  const Eigen::RowVectorXd expect = f.frames.row(300) - f.frames.middleRows(150, 300).colwise().mean();
  check.Expect((cmn.frames.row(300) - expect).cwiseAbs().maxCoeff() < 1e-12, "CMN window mean");
  FeatureMatrix flat;
  flat.frames = Eigen::MatrixXd::Constant(450, 4, 2.5);
  check.Expect(SlidingCmn(flat).frames.cwiseAbs().maxCoeff() < 1e-12, "CMN of a constant is not zero");

  Waveform silence;
  silence.samples = Eigen::VectorXd::Zero(8000);
  const auto quiet = EnergyVad(silence, fe);
  check.Expect(std::count(quiet.begin(), quiet.end(), true) == 0, "silence has voiced frames");
  const auto tone = EnergyVad(Tone(440.0, 0.9, 8000), fe);
  check.Expect(std::count(tone.begin(), tone.end(), false) == 0, "tone has unvoiced frames");
  Waveform half;
  half.samples = Eigen::VectorXd::Zero(16000);
  half.samples.tail(8000) = Tone(440.0, 0.9, 8000).samples;
  const auto mask = EnergyVad(half, fe);
  bool split = mask.size() == 198;
  for (std::size_t t = 0; split && t < mask.size(); ++t) split = mask[t] == (t >= 98);
  check.Expect(split, "silence-then-tone mask differs from frames 98..197");

  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> snr(0.0, 20.0);
  double worst_snr = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double want = snr(rng);
    const auto mix = ScaleToSnr(Noise(4000, 60 + static_cast<std::uint64_t>(i), 0.1),
                                Noise(1500, 600 + static_cast<std::uint64_t>(i), 0.05), want);
    const double got = 10.0 * std::log10(MeanPower(mix.signal) / MeanPower(mix.interference));
    worst_snr = std::max(worst_snr, std::abs(got - want));
  }
  check.Expect(worst_snr <= 0.1, Fmt("SNR error %.3f dB", worst_snr));

  Waveform impulse;
  impulse.samples = Eigen::VectorXd::Zero(1);
  impulse.samples[0] = 1.0;
  const auto speech = Noise(6000, 70, 0.2);
  check.Expect(ConvolveRir(speech, impulse).samples == speech.samples, "unit-impulse RIR changes the signal");
  return check.Done(Fmt("frame counts, CMN, VAD silence/tone/split, SNR within %.2e dB, RIR identity", worst_snr));
}

// ---- end to end -------------------------------------------------------------

int RunCommand(const std::string& cmd, const std::string& log) {
  const int status = std::system((cmd + " >> '" + log + "' 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome EndToEnd(const std::string& cli, const std::string& workdir) {
  Check check;
  fs::remove_all(workdir);
  fs::create_directories(workdir);
  const std::string log = (fs::path(workdir) / "acceptance.log").string();
  const std::string base = "'" + cli + "' -w '" + workdir + "' ";
  const auto t0 = Clock::now();
  std::string timings;
  for (const char* step : {"synth", "train --stage 1", "train --stage 2", "extract", "score", "evaluate"}) {
    const auto ts = Clock::now();
    const int code = RunCommand(base + step, log);
    timings += Fmt("%s%s %.0fs", timings.empty() ? "" : ", ", step, Seconds(ts));
    check.Expect(code == 0, Fmt("`%s` exited %d (see %s)", step, code, log.c_str()));
    if (code != 0) return check.Done(timings);
  }
  const double secs = Seconds(t0);

  const ScoreSet scores = ReadScores((fs::path(workdir) / "scores/system.txt").string());
  const SplitScores split = SplitByLabel(scores);
  const double eer = ComputeEer(split.target, split.nontarget);
  const double min_dcf = ComputeMinDcf(split.target, split.nontarget, DcfParams::Single(0.01));
  check.Expect(split.target.size() == 500 && split.nontarget.size() == 500,
               Fmt("%zu target / %zu nontarget trials", split.target.size(), split.nontarget.size()));
  check.Expect(eer <= 0.05, Fmt("EER %.4f", eer));
  check.Expect(min_dcf <= 0.5, Fmt("minDCF(0.01) %.4f", min_dcf));
  check.Expect(secs <= 15 * 60.0, Fmt("runtime %.0f s", secs));

  // mean cosine within and across eval speakers
  const EmbeddingStore store = ReadEmbeddings((fs::path(workdir) / "emb/embeddings.emb").string());
  std::map<std::string, std::string> speaker;
  for (const char* m : {"manifests/enroll.tsv", "manifests/test.tsv"})
    for (const auto& e : ReadManifest((fs::path(workdir) / m).string())) speaker[e.utt_id] = e.speaker_id;
  double intra = 0.0, inter = 0.0;
  long n_intra = 0, n_inter = 0;
  for (auto a = store.begin(); a != store.end(); ++a)
    for (auto b = std::next(a); b != store.end(); ++b) {
      const double c = CosineScore(a->second, b->second);
      if (speaker.at(a->first) == speaker.at(b->first)) intra += c, ++n_intra;
      else inter += c, ++n_inter;
    }
  intra /= static_cast<double>(std::max(1L, n_intra));
  inter /= static_cast<double>(std::max(1L, n_inter));
  check.Expect(intra > inter, Fmt("intra %.3f <= inter %.3f", intra, inter));

  return check.Done(Fmt("EER %.2f%%, minDCF(0.01) %.4f, mean cosine intra %.3f / inter %.3f, %.0f s (%s)",
                        100.0 * eer, min_dcf, intra, inter, secs, timings.c_str()));
}

}  // namespace
}  // namespace spkv

int main(int argc, char** argv) {
  CLI::App app{"spkv acceptance checks"};
  std::string cli, workdir = "acceptance_work";
  bool skip_e2e = false;
  app.add_option("--cli", cli, "path to the spkv binary");
  app.add_option("--workdir", workdir, "scratch directory for the end-to-end run")->capture_default_str();
  app.add_flag("--skip-e2e", skip_e2e, "skip the end-to-end run");
  CLI11_PARSE(app, argc, argv);

  using Suite = std::pair<const char*, std::function<spkv::Outcome()>>;
  std::vector<Suite> suites = {
      {"gradient", spkv::GradientSuite},
      {"reparam", spkv::ReparamSuite},
      {"loss_reduction", spkv::LossSuite},
      {"metric_oracle", spkv::MetricSuite},
      {"scheduler", spkv::SchedulerSuite},
      {"transplant", spkv::TransplantSuite},
      {"calibration", spkv::CalibrationSuite},
      {"frontend_augment", spkv::FrontendAugmentSuite},
  };
  if (!skip_e2e) {
    if (cli.empty()) {
      std::fprintf(stderr, "--cli is required unless --skip-e2e is given\n");
      return 2;
    }
    suites.push_back({"end_to_end", [&] { return spkv::EndToEnd(cli, workdir); }});
  }
  int failed = 0;
  for (const auto& [name, run] : suites) {
    spkv::Outcome r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", name, r.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
