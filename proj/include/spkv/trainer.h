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

// Two-stage training: pre-training on the full label space, then
// refinement on an in-domain subset whose classifier rows are copied out of
// the pre-trained head.

#ifndef SPKV_TRAINER_H_
#define SPKV_TRAINER_H_

#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spkv/checkpoint.h"
#include "spkv/loss.h"
#include "spkv/nets.h"

namespace spkv {

template <typename S>
struct OptimizerState {
  double lr = 0.05;
  double momentum = 0.9;
  std::map<std::string, Eigen::Array<S, Eigen::Dynamic, 1>> velocity;
};

struct PlateauScheduler {
  long validate_every = 8000;
  int patience = 2;
  double factor = 0.5;
  double min_lr = 1e-6;
  double threshold = 1e-4;  // minimum decrease that counts as improvement
  double best = std::numeric_limits<double>::infinity();
  int bad_count = 0;
};

void ValidateScheduler(const PlateauScheduler& sched);

// Called once per validation. An improvement (best - metric >= threshold)
// resets the counter; otherwise it grows, and once it exceeds the patience
// the rate is multiplied by factor (floored at min_lr) and the counter resets.
double PlateauUpdate(PlateauScheduler& sched, double lr, double metric, bool* improved = nullptr);

// Uniform random contiguous slice; utterances shorter than chunk_frames wrap
// around from their first frame.
Eigen::MatrixXd SampleChunk(const Eigen::MatrixXd& utt, int chunk_frames, std::mt19937_64& rng);

// Deterministic 64-bit mix used to derive per-batch seeds.
std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t index);

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>*>>;

// v <- momentum * v + g;  p <- p - lr * v.  Missing gradients count as zero.
template <typename S>
void SgdStep(const NamedParams<S>& params, OptimizerState<S>& opt) {
  for (const auto& [name, p] : params) {
    auto it = opt.velocity.find(name);
    if (it == opt.velocity.end())
      it = opt.velocity.emplace(name, Eigen::Array<S, Eigen::Dynamic, 1>::Zero(p->size())).first;
    auto& v = it->second;
    if (v.size() != p->size())
      throw ShapeError("velocity for '" + name + "' has " + std::to_string(v.size()) +
                       " entries, parameter has " + std::to_string(p->size()));
    v *= S(opt.momentum);
    if (p->has_grad()) v += p->grad();
    p->value() -= S(opt.lr) * v;
  }
}

// Position in the base label space of every subset speaker.
std::vector<int> MapSpeakers(const std::vector<std::string>& base_speakers,
                             const std::vector<std::string>& subset_speakers);

// New head whose row i is base row rows[i].
template <typename S>
CMSoftmaxHead<S> TransplantClassifier(const CMSoftmaxHead<S>& base, const std::vector<int>& rows) {
  CheckHead(base);
  if (rows.empty()) throw ArgumentError("transplant needs at least one class");
  const Index dim = base.dim();
  typename Tensor<S>::Array w(static_cast<Index>(rows.size()) * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= base.num_classes())
      throw LookupError("classifier row " + std::to_string(rows[i]) + " outside base head");
    w.segment(static_cast<Index>(i) * dim, dim) = base.weight.value().segment(rows[i] * dim, dim);
  }
  CMSoftmaxHead<S> head = base;
  head.weight = Tensor<S>(Shape{static_cast<Index>(rows.size()), dim}, std::move(w), true);
  return head;
}

struct StageConfig {
  int stage = 1;
  int batch_size = 16;
  int chunk_frames = 200;
  long max_iters = 600;
  long validate_every = 100;
  long log_every = 20;
  double lr = 0.05;
  double momentum = 0.9;
  int patience = 2;
  double factor = 0.5;
  double min_lr = 1e-6;
  double improve_threshold = 1e-4;
  double scale = 32.0;
  MarginSchedule m1 = MarginSchedule::Linear(0.0, 0.2, 150);
  MarginSchedule m2 = MarginSchedule::Linear(0.0, 0.1, 150);
  std::uint64_t seed = 1;
  int workers = 1;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only

  // Full-scale values; the initial rate and iteration budget are not
  // published and use the desk defaults scaled up.
  static StageConfig PaperStage1();
  static StageConfig PaperStage2();
  static StageConfig DeskStage1();
  static StageConfig DeskStage2();
};

void ValidateStageConfig(const StageConfig& cfg, int min_frames);

struct LabeledUtterance {
  std::string id;
  int label = 0;
  Eigen::MatrixXd feats;  // T x dim after VAD and CMN
};

struct TrainingCorpus {
  std::vector<std::string> speakers;  // label i is speakers[i]
  std::vector<LabeledUtterance> train;
  std::vector<LabeledUtterance> valid;
};

template <typename S>
struct TrainState {
  BackboneModel<S> model;
  CMSoftmaxHead<S> head;
  OptimizerState<S> optimizer;
  PlateauScheduler scheduler;
  long iteration = 0;
  int stage = 1;
  std::vector<std::string> speakers;

  TrainState Clone() const {
    TrainState out = *this;
    out.model = model.Clone();
    out.head.weight = Tensor<S>(head.weight.shape(), head.weight.value(), true);
    return out;
  }

  NamedParams<S> Parameters() {
    NamedParams<S> params;
    for (auto& [name, t] : model.params) params.emplace_back("backbone." + name, &t);
    params.emplace_back("head.weight", &head.weight);
    return params;
  }
};

template <typename S>
void SaveTrainState(const std::string& path, const TrainState<S>& state) {
  Container c;
  AppendModel(state.model, &c);
  c.tensors.push_back(ToRecord("head.weight", state.head.weight));
  for (const auto& [name, v] : state.optimizer.velocity)
    c.tensors.push_back({"optim.velocity." + name, DTypeOf<S>(), Shape{v.size()}, v.template cast<double>()});
  const auto& sc = state.scheduler;
  c.meta["format"] = "spkv-checkpoint";
  c.meta["precision"] = sizeof(S) == 4 ? "float" : "double";
  c.meta["stage"] = state.stage;
  c.meta["iteration"] = state.iteration;
  c.meta["speakers"] = state.speakers;
  c.meta["head"] = {{"scale", state.head.scale}, {"m1", state.head.m1}, {"m2", state.head.m2}};
  c.meta["optimizer"] = {{"lr", state.optimizer.lr}, {"momentum", state.optimizer.momentum}};
  c.meta["scheduler"] = {{"validate_every", sc.validate_every}, {"patience", sc.patience},
                         {"factor", sc.factor}, {"min_lr", sc.min_lr}, {"threshold", sc.threshold},
                         {"best", std::isfinite(sc.best) ? nlohmann::json(sc.best) : nlohmann::json(nullptr)},
                         {"bad_count", sc.bad_count}};
  WriteContainer(path, c);
}

template <typename S>
TrainState<S> LoadTrainState(const std::string& path) {
  const Container c = ReadContainer(path);
  if (c.meta.value("format", "") != "spkv-checkpoint") throw FormatError(path + ": not a checkpoint");
  TrainState<S> state;
  try {
    state.model = ExtractModel<S>(c);
    state.head.weight = FromRecord<S>(c.Get("head.weight"), true);
    const auto& head = c.meta.at("head");
    state.head.scale = head.at("scale");
    state.head.m1 = head.at("m1");
    state.head.m2 = head.at("m2");
    state.stage = c.meta.at("stage");
    state.iteration = c.meta.at("iteration");
    state.speakers = c.meta.at("speakers").get<std::vector<std::string>>();
    state.optimizer.lr = c.meta.at("optimizer").at("lr");
    state.optimizer.momentum = c.meta.at("optimizer").at("momentum");
    const auto& sc = c.meta.at("scheduler");
    state.scheduler.validate_every = sc.at("validate_every");
    state.scheduler.patience = sc.at("patience");
    state.scheduler.factor = sc.at("factor");
    state.scheduler.min_lr = sc.at("min_lr");
    state.scheduler.threshold = sc.at("threshold");
    state.scheduler.best =
        sc.at("best").is_null() ? std::numeric_limits<double>::infinity() : sc.at("best").get<double>();
    state.scheduler.bad_count = sc.at("bad_count");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint metadata: " + e.what());
  }
  const std::string prefix = "optim.velocity.";
  for (const auto& r : c.tensors)
    if (r.name.rfind(prefix, 0) == 0)
      state.optimizer.velocity.emplace(r.name.substr(prefix.size()), r.values.cast<S>());
  return state;
}

// Fresh stage-1 state: seeded backbone and unit-row classifier.
template <typename S>
TrainState<S> InitialState(const ArchConfig& arch, const std::vector<std::string>& speakers,
                           const StageConfig& cfg) {
  TrainState<S> state;
  state.model = BuildBackbone<S>(arch, cfg.seed);
  state.head = MakeHead<S>(static_cast<Index>(speakers.size()), EmbeddingDim(arch), cfg.scale,
                           MixSeed(cfg.seed, 0x6865616455ull));
  state.speakers = speakers;
  state.stage = cfg.stage;
  state.optimizer.lr = cfg.lr;
  state.optimizer.momentum = cfg.momentum;
  return state;
}

// Stage-2 starting point: backbone copied unchanged, classifier rows picked
// from the base head by speaker id; optimizer and scheduler start afresh.
template <typename S>
TrainState<S> RefinementState(const TrainState<S>& base, const std::vector<std::string>& subset_speakers,
                              const StageConfig& cfg) {
  TrainState<S> state;
  state.model = base.model.Clone();
  state.head = TransplantClassifier(base.head, MapSpeakers(base.speakers, subset_speakers));
  state.head.scale = cfg.scale;
  state.speakers = subset_speakers;
  state.stage = cfg.stage;
  state.optimizer.lr = cfg.lr;
  state.optimizer.momentum = cfg.momentum;
  return state;
}

struct Batch {
  std::vector<Eigen::MatrixXd> chunks;
  std::vector<int> labels;
};

// Batch b depends only on (seed, b): speakers uniform, then an utterance of
// that speaker, then a chunk.
Batch BuildBatch(const TrainingCorpus& corpus, const StageConfig& cfg, long batch_index);

template <typename S>
double ValidationLoss(TrainState<S>& state, const TrainingCorpus& corpus) {
  NoGradGuard no_grad;
  const Mode saved = state.model.mode;
  state.model.mode = Mode::kEval;
  const int min_frames = TotalStride(state.model.config);
  double total = 0.0;
  int count = 0;
  for (const auto& u : corpus.valid) {
    if (u.feats.rows() < min_frames) continue;
    const Tensor<S> emb = ForwardEmbedding(state.model, MakeInput<S>(u.feats));
    total += static_cast<double>(CMSoftmaxLoss(emb, {u.label}, state.head).item());
    ++count;
  }
  state.model.mode = saved;
  if (count == 0) throw ConfigError("validation split has no usable utterances");
  return total / count;
}

struct StageResult {
  long iterations = 0;
  long best_iteration = -1;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  double first_loss = std::numeric_limits<double>::quiet_NaN();
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  std::string stop_reason;
  std::vector<std::string> checkpoints;
};

namespace detail {

inline void WriteLogLine(std::ostream* log, const char* fmt, auto... args) {
  if (!log) return;
  char line[512];
  std::snprintf(line, sizeof(line), fmt, args...);
  *log << line << '\n';
  log->flush();
}

}  // namespace detail

// The training loop: sample batch -> forward -> combined-margin loss with the
// scheduled margins -> backward -> SGD step. Every validate_every
// iterations the held-out loss drives the plateau scheduler and a checkpoint
// is written; *best receives the state with the lowest validation loss.
template <typename S>
StageResult RunStage(const StageConfig& cfg, const TrainingCorpus& corpus, TrainState<S>& state,
                     std::ostream* log = nullptr, TrainState<S>* best = nullptr) {
  ValidateStageConfig(cfg, TotalStride(state.model.config));
  if (corpus.train.empty()) throw ConfigError("training corpus is empty");
  if (corpus.speakers.size() != static_cast<std::size_t>(state.head.num_classes()))
    throw ConfigError("corpus has " + std::to_string(corpus.speakers.size()) +
                      " speakers but the classifier has " + std::to_string(state.head.num_classes()) + " rows");
  state.scheduler.validate_every = cfg.validate_every;
  state.scheduler.patience = cfg.patience;
  state.scheduler.factor = cfg.factor;
  state.scheduler.min_lr = cfg.min_lr;
  state.scheduler.threshold = cfg.improve_threshold;
  state.head.scale = cfg.scale;
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  StageResult result;
  if (best) *best = state.Clone();
  std::deque<std::future<Batch>> pending;
  long next_batch = state.iteration;
  auto fetch = [&]() -> Batch {
    if (cfg.workers <= 1) return BuildBatch(corpus, cfg, state.iteration);
    while (static_cast<int>(pending.size()) < cfg.workers && next_batch < cfg.max_iters) {
      const long b = next_batch++;
      pending.push_back(std::async(std::launch::async, [&corpus, &cfg, b] { return BuildBatch(corpus, cfg, b); }));
    }
    Batch batch = pending.front().get();
    pending.pop_front();
    return batch;
  };

  const std::string tag = "stage" + std::to_string(cfg.stage);
  while (state.iteration < cfg.max_iters) {
    const long iter = state.iteration;
    state.head.m1 = MarginAt(cfg.m1, iter);
    state.head.m2 = MarginAt(cfg.m2, iter);
    Batch batch = fetch();
    std::vector<const Eigen::MatrixXd*> ptrs;
    for (const auto& c : batch.chunks) ptrs.push_back(&c);

    state.model.mode = Mode::kTrain;
    auto params = state.Parameters();
    for (auto& [name, p] : params) p->ZeroGrad();
    double loss_value = 0.0;
    try {
      const Tensor<S> emb = ForwardEmbedding(state.model, MakeInputBatch<S>(ptrs));
      const Tensor<S> loss = CMSoftmaxLoss(emb, batch.labels, state.head);
      loss_value = static_cast<double>(loss.item());
      Backward(loss);
    } catch (const NumericError& e) {
      throw NumericError(tag + " iteration " + std::to_string(iter) + ": " + e.what() +
                         " (lr=" + std::to_string(state.optimizer.lr) + ")");
    }
    SgdStep(params, state.optimizer);
    ++state.iteration;
    ++result.iterations;
    if (result.iterations == 1) result.first_loss = loss_value;
    result.last_loss = loss_value;
    if (iter % cfg.log_every == 0 || state.iteration == cfg.max_iters)
      detail::WriteLogLine(log, "iter=%ld loss=%.6f lr=%.9g m1=%.6g m2=%.6g", iter, loss_value,
                           state.optimizer.lr, state.head.m1, state.head.m2);

    if (state.iteration % cfg.validate_every == 0 || state.iteration == cfg.max_iters) {
      const double lr_before = state.optimizer.lr;
      const double valid_loss = ValidationLoss(state, corpus);
      bool improved = false;
      state.optimizer.lr = PlateauUpdate(state.scheduler, lr_before, valid_loss, &improved);
      detail::WriteLogLine(log, "iter=%ld val_loss=%.6f lr=%.9g m1=%.6g m2=%.6g improved=%d", iter,
                           valid_loss, state.optimizer.lr, state.head.m1, state.head.m2, improved ? 1 : 0);
      if (improved) {
        result.best_iteration = state.iteration;
        result.best_valid_loss = valid_loss;
        if (best) *best = state.Clone();
      }
      if (!cfg.checkpoint_dir.empty()) {
        const auto dir = std::filesystem::path(cfg.checkpoint_dir);
        const std::string path = (dir / (tag + "_iter" + std::to_string(state.iteration) + ".ckpt")).string();
        SaveTrainState(path, state);
        result.checkpoints.push_back(path);
        if (improved) SaveTrainState((dir / (tag + "_best.ckpt")).string(), state);
      }
      if (!improved && lr_before <= cfg.min_lr) {
        result.stop_reason = "learning rate at floor without improvement";
        break;
      }
    }
  }
  while (!pending.empty()) {
    pending.front().wait();
    pending.pop_front();
  }
  if (result.stop_reason.empty()) result.stop_reason = "max_iters reached";
  if (!cfg.checkpoint_dir.empty()) {
    const auto dir = std::filesystem::path(cfg.checkpoint_dir);
    SaveTrainState((dir / (tag + "_last.ckpt")).string(), state);
    if (result.best_iteration < 0) SaveTrainState((dir / (tag + "_best.ckpt")).string(), state);
  }
  return result;
}

}  // namespace spkv

#endif  // SPKV_TRAINER_H_
