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

// Embedding extractors: ResNet with bottleneck blocks and RepVGG, both fed
// a 1-channel (freq x time) log-mel image, followed by global statistics
// pooling and a linear embedding layer.

#ifndef SPKV_NETS_H_
#define SPKV_NETS_H_

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "spkv/ops.h"

namespace spkv {

struct ResNetConfig {
  int base_channels = 64;
  std::array<int, 4> block_counts{3, 4, 14, 3};
  int embedding_dim = 256;
  int feat_dim = 64;

  static ResNetConfig ResNet74() { return {}; }
  static ResNetConfig ResNet152() {
    ResNetConfig c;
    c.block_counts = {3, 8, 36, 3};
    return c;
  }
};

struct RepVGGConfig {
  int base_channels = 64;
  std::array<int, 5> stage_depths{1, 4, 6, 16, 1};
  double width_a = 2.5;
  double width_b = 5.0;
  int embedding_dim = 256;
  int feat_dim = 64;

  static RepVGGConfig B2() { return {}; }
};

using ArchConfig = std::variant<ResNetConfig, RepVGGConfig>;

inline constexpr int kBottleneckExpansion = 4;

void ValidateConfig(const ResNetConfig& cfg);
void ValidateConfig(const RepVGGConfig& cfg);
void ValidateConfig(const ArchConfig& cfg);

// Main-path conv layers plus stem and embedding layer: 3 * sum(blocks) + 2.
// Projection shortcuts are not counted, matching the ResNet naming scheme.
int WeightedLayerCount(const ResNetConfig& cfg);

// Stage 0: min(base, base*a); stages 1-3: base*2^(k-1)*a; stage 4: 8*base*b.
std::array<int, 5> RepVGGStageWidths(const RepVGGConfig& cfg);

// Product of the stage strides (time and frequency are downsampled alike).
int TotalStride(const ArchConfig& cfg);

// ceil-halving per stride-2 stage.
Index DownsampledLength(Index length, const ArchConfig& cfg);

int FinalChannels(const ArchConfig& cfg);
int EmbeddingDim(const ArchConfig& cfg);
int PooledDim(const ArchConfig& cfg);

enum class Mode { kTrain, kEval };
enum class Branches { kMultiBranch, kFused };

template <typename S>
struct BackboneModel {
  ArchConfig config;
  std::map<std::string, Tensor<S>> params;   // trainable
  std::map<std::string, Tensor<S>> buffers;  // batch-norm running statistics
  Mode mode = Mode::kTrain;
  Branches branches = Branches::kMultiBranch;

  bool is_resnet() const { return std::holds_alternative<ResNetConfig>(config); }
  bool is_repvgg() const { return std::holds_alternative<RepVGGConfig>(config); }

  Tensor<S>& param(const std::string& name) { return Lookup(params, name, "parameter"); }
  Tensor<S>& buffer(const std::string& name) { return Lookup(buffers, name, "buffer"); }
  bool has_param(const std::string& name) const { return params.count(name) != 0; }

  Index num_parameters() const {
    Index n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }

  // Deep copy; gradients and history are not carried over.
  BackboneModel Clone() const {
    BackboneModel out;
    out.config = config;
    out.mode = mode;
    out.branches = branches;
    for (const auto& [name, t] : params) out.params.emplace(name, Tensor<S>(t.shape(), t.value(), true));
    for (const auto& [name, t] : buffers) out.buffers.emplace(name, t.Detach());
    return out;
  }

 private:
  static Tensor<S>& Lookup(std::map<std::string, Tensor<S>>& m, const std::string& name,
                           const char* what) {
    auto it = m.find(name);
    if (it == m.end()) throw LookupError(std::string("model has no ") + what + " '" + name + "'");
    return it->second;
  }
};

template <typename To, typename From>
BackboneModel<To> CastModel(const BackboneModel<From>& in) {
  BackboneModel<To> out;
  out.config = in.config;
  out.mode = in.mode;
  out.branches = in.branches;
  for (const auto& [name, t] : in.params)
    out.params.emplace(name, Tensor<To>(t.shape(), t.value().template cast<To>(), true));
  for (const auto& [name, t] : in.buffers)
    out.buffers.emplace(name, Tensor<To>(t.shape(), t.value().template cast<To>()));
  return out;
}

namespace detail {

template <typename S>
void AddConv(BackboneModel<S>& model, const std::string& name, int out, int in, int k,
             std::mt19937_64& rng) {
  // He-normal, fan-in mode.
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / (in * k * k)));
  Tensor<S> w(Shape{out, in, k, k}, true);
  for (Index i = 0; i < w.size(); ++i) w.value()[i] = static_cast<S>(gauss(rng));
  model.params.emplace(name + ".weight", std::move(w));
}

template <typename S>
void AddBatchNorm(BackboneModel<S>& model, const std::string& name, int channels) {
  model.params.emplace(name + ".weight",
                       Tensor<S>(Shape{channels}, Tensor<S>::Array::Ones(channels), true));
  model.params.emplace(name + ".bias", Tensor<S>(Shape{channels}, true));
  model.buffers.emplace(name + ".running_mean", Tensor<S>(Shape{channels}));
  model.buffers.emplace(name + ".running_var",
                        Tensor<S>(Shape{channels}, Tensor<S>::Array::Ones(channels)));
}

template <typename S>
void AddEmbeddingLayer(BackboneModel<S>& model, std::mt19937_64& rng) {
  const int in = PooledDim(model.config), out = EmbeddingDim(model.config);
  std::normal_distribution<double> gauss(0.0, std::sqrt(1.0 / in));
  Tensor<S> w(Shape{out, in}, true);
  for (Index i = 0; i < w.size(); ++i) w.value()[i] = static_cast<S>(gauss(rng));
  model.params.emplace("embed.weight", std::move(w));
  model.params.emplace("embed.bias", Tensor<S>(Shape{out}, true));
}

template <typename S>
Tensor<S> ApplyBatchNorm(BackboneModel<S>& model, const std::string& name, const Tensor<S>& x) {
  BatchNormOptions opt;
  opt.training = model.mode == Mode::kTrain;
  return BatchNorm2d(x, model.param(name + ".weight"), model.param(name + ".bias"),
                     model.buffer(name + ".running_mean"), model.buffer(name + ".running_var"), opt);
}

template <typename S>
Tensor<S> ConvBn(BackboneModel<S>& model, const std::string& conv, const std::string& bn,
                 const Tensor<S>& x, int stride, int pad) {
  return ApplyBatchNorm(model, bn, Conv2d(x, model.param(conv + ".weight"), Conv2dOptions{stride, pad}));
}

inline std::string BlockName(const char* stage, int s, int b) {
  return std::string(stage) + std::to_string(s) + "." + std::to_string(b);
}

template <typename S>
Tensor<S> ResNetFrames(BackboneModel<S>& model, const Tensor<S>& input) {
  const auto& cfg = std::get<ResNetConfig>(model.config);
  Tensor<S> x = Relu(ConvBn(model, "stem.conv", "stem.bn", input, 1, 1));
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.block_counts[static_cast<std::size_t>(s)]; ++b) {
      const std::string p = BlockName("layer", s + 1, b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      Tensor<S> out = Relu(ConvBn(model, p + ".conv1", p + ".bn1", x, 1, 0));
      out = Relu(ConvBn(model, p + ".conv2", p + ".bn2", out, stride, 1));
      out = ConvBn(model, p + ".conv3", p + ".bn3", out, 1, 0);
      Tensor<S> shortcut = model.has_param(p + ".shortcut.conv.weight")
                               ? ConvBn(model, p + ".shortcut.conv", p + ".shortcut.bn", x, stride, 0)
                               : x;
      x = Relu(Add(out, shortcut));
    }
  }
  return x;
}

template <typename S>
Tensor<S> RepVGGFrames(BackboneModel<S>& model, const Tensor<S>& input) {
  const auto& cfg = std::get<RepVGGConfig>(model.config);
  Tensor<S> x = input;
  for (int s = 0; s < 5; ++s) {
    for (int b = 0; b < cfg.stage_depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string p = BlockName("stage", s, b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      if (model.branches == Branches::kFused) {
        x = Relu(Conv2d(x, model.param(p + ".fused.weight"), model.param(p + ".fused.bias"),
                        Conv2dOptions{stride, 1}));
        continue;
      }
      Tensor<S> sum = Add(ConvBn(model, p + ".dense.conv", p + ".dense.bn", x, stride, 1),
                          ConvBn(model, p + ".pointwise.conv", p + ".pointwise.bn", x, stride, 0));
      if (model.has_param(p + ".identity.bn.weight"))
        sum = Add(sum, ApplyBatchNorm(model, p + ".identity.bn", x));
      x = Relu(sum);
    }
  }
  return x;
}

}  // namespace detail

// Stem conv + 4 stages of bottleneck blocks (stride 2 entering stages 2-4,
// projection shortcuts where the shape changes) + embedding layer.
template <typename S>
BackboneModel<S> BuildResNet(const ResNetConfig& cfg, std::uint64_t seed) {
  ValidateConfig(cfg);
  std::mt19937_64 rng(seed);
  BackboneModel<S> model;
  model.config = cfg;
  const int base = cfg.base_channels;
  detail::AddConv(model, "stem.conv", base, 1, 3, rng);
  detail::AddBatchNorm(model, "stem.bn", base);
  int in = base;
  for (int s = 0; s < 4; ++s) {
    const int planes = base << s;
    const int out = planes * kBottleneckExpansion;
    for (int b = 0; b < cfg.block_counts[static_cast<std::size_t>(s)]; ++b) {
      const std::string p = detail::BlockName("layer", s + 1, b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      detail::AddConv(model, p + ".conv1", planes, in, 1, rng);
      detail::AddBatchNorm(model, p + ".bn1", planes);
      detail::AddConv(model, p + ".conv2", planes, planes, 3, rng);
      detail::AddBatchNorm(model, p + ".bn2", planes);
      detail::AddConv(model, p + ".conv3", out, planes, 1, rng);
      detail::AddBatchNorm(model, p + ".bn3", out);
      if (stride != 1 || in != out) {
        detail::AddConv(model, p + ".shortcut.conv", out, in, 1, rng);
        detail::AddBatchNorm(model, p + ".shortcut.bn", out);
      }
      in = out;
    }
  }
  detail::AddEmbeddingLayer(model, rng);
  return model;
}

// Training-time RepVGG: every block sums a 3x3 conv+BN branch, a 1x1
// conv+BN branch and, when in == out channels at stride 1, an identity BN.
template <typename S>
BackboneModel<S> BuildRepVGG(const RepVGGConfig& cfg, std::uint64_t seed) {
  ValidateConfig(cfg);
  std::mt19937_64 rng(seed);
  BackboneModel<S> model;
  model.config = cfg;
  const auto widths = RepVGGStageWidths(cfg);
  int in = 1;
  for (int s = 0; s < 5; ++s) {
    const int out = widths[static_cast<std::size_t>(s)];
    for (int b = 0; b < cfg.stage_depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string p = detail::BlockName("stage", s, b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      detail::AddConv(model, p + ".dense.conv", out, in, 3, rng);
      detail::AddBatchNorm(model, p + ".dense.bn", out);
      detail::AddConv(model, p + ".pointwise.conv", out, in, 1, rng);
      detail::AddBatchNorm(model, p + ".pointwise.bn", out);
      if (in == out && stride == 1) detail::AddBatchNorm(model, p + ".identity.bn", out);
      in = out;
    }
  }
  detail::AddEmbeddingLayer(model, rng);
  return model;
}

template <typename S>
BackboneModel<S> BuildBackbone(const ArchConfig& cfg, std::uint64_t seed) {
  if (const auto* r = std::get_if<ResNetConfig>(&cfg)) return BuildResNet<S>(*r, seed);
  return BuildRepVGG<S>(std::get<RepVGGConfig>(cfg), seed);
}

// Stacks equal-length T x F feature matrices into an [N, 1, F, T] tensor.
template <typename S>
Tensor<S> MakeInputBatch(const std::vector<const Eigen::MatrixXd*>& feats) {
  if (feats.empty()) throw ArgumentError("empty feature batch");
  const Index frames = feats[0]->rows(), dim = feats[0]->cols();
  const auto n = static_cast<Index>(feats.size());
  typename Tensor<S>::Array v(n * dim * frames);
  for (Index b = 0; b < n; ++b) {
    const Eigen::MatrixXd& f = *feats[static_cast<std::size_t>(b)];
    if (f.rows() != frames || f.cols() != dim)
      throw ShapeError("feature batch entries must share one shape");
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>(v.data() + b * dim * frames, frames,
                                                                  dim) = f.cast<S>();
  }
  return Tensor<S>(Shape{n, 1, dim, frames}, std::move(v));
}

template <typename S>
Tensor<S> MakeInput(const Eigen::MatrixXd& feats) {
  return MakeInputBatch<S>({&feats});
}

// [N, 1, F, T] -> [N, C, F', T'] with T' = ceil(T / total stride).
template <typename S>
Tensor<S> ForwardFrames(BackboneModel<S>& model, const Tensor<S>& input) {
  detail::CheckRank(input.shape(), 4, "forward_frames", "input");
  const int feat_dim = std::visit([](const auto& c) { return c.feat_dim; }, model.config);
  if (input.dim(1) != 1 || input.dim(2) != feat_dim)
    throw ShapeError("backbone expects [N, 1, " + std::to_string(feat_dim) + ", T] input, got " +
                     ShapeString(input.shape()));
  const int min_frames = TotalStride(model.config);
  if (input.dim(3) < min_frames)
    throw LengthError("input has " + std::to_string(input.dim(3)) + " frames, backbone needs at least " +
                      std::to_string(min_frames));
  return model.is_resnet() ? detail::ResNetFrames(model, input) : detail::RepVGGFrames(model, input);
}

// [N, C, F, T] -> [N, 2*C*F]: per (channel, freq) mean over time followed by
// the standard deviation. The std is sqrt(max(var, 0)); its gradient is
// taken as zero where std <= eps.
template <typename S>
Tensor<S> GspPool(const Tensor<S>& map, S eps = S(1e-8)) {
  detail::CheckRank(map.shape(), 4, "gsp_pool", "input");
  const Index n = map.dim(0), cf = map.dim(1) * map.dim(2), t = map.dim(3);
  if (t < 1) throw ShapeError("gsp_pool: empty time axis");
  typename Tensor<S>::Array out(n * 2 * cf);
  for (Index b = 0; b < n; ++b) {
    for (Index r = 0; r < cf; ++r) {
      const auto row = map.value().segment((b * cf + r) * t, t);
      const S mean = row.sum() / S(t);
      const S var = (row - mean).square().sum() / S(t);
      out[b * 2 * cf + r] = mean;
      out[b * 2 * cf + cf + r] = std::sqrt(std::max(var, S(0)));
    }
  }
  return detail::MakeResult<S>(
      "gsp_pool", Shape{n, 2 * cf}, std::move(out), {map.node()}, [=](detail::Node<S>& self) {
        auto& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        auto& gx = xn.EnsureGrad();
        for (Index b = 0; b < n; ++b) {
          for (Index r = 0; r < cf; ++r) {
            const auto row = xn.value.segment((b * cf + r) * t, t);
            const S mean = self.value[b * 2 * cf + r];
            const S std = self.value[b * 2 * cf + cf + r];
            const S g_mean = self.grad[b * 2 * cf + r];
            const S g_std = self.grad[b * 2 * cf + cf + r];
            auto grow = gx.segment((b * cf + r) * t, t);
            grow += g_mean / S(t);
            if (std > eps) grow += (row - mean) * (g_std / (S(t) * std));
          }
        }
      });
}

// Linear projection to the embedding dimension; no normalization.
template <typename S>
Tensor<S> Embed(BackboneModel<S>& model, const Tensor<S>& pooled) {
  return Linear(pooled, model.param("embed.weight"), model.param("embed.bias"));
}

template <typename S>
Tensor<S> ForwardEmbedding(BackboneModel<S>& model, const Tensor<S>& input) {
  return Embed(model, GspPool(ForwardFrames(model, input)));
}

namespace detail {

// BN folded into the preceding conv: W' = W * gamma / sigma, b' = beta - mu * gamma / sigma.
template <typename S>
void FoldBatchNorm(const BackboneModel<S>& model, const std::string& bn, double eps,
                   Eigen::Array<S, Eigen::Dynamic, 1>* scale, Eigen::Array<S, Eigen::Dynamic, 1>* shift) {
  const auto& gamma = model.params.at(bn + ".weight").value();
  const auto& beta = model.params.at(bn + ".bias").value();
  const auto& mu = model.buffers.at(bn + ".running_mean").value();
  const auto& var = model.buffers.at(bn + ".running_var").value();
  *scale = gamma * (var + S(eps)).rsqrt();
  *shift = beta - mu * *scale;
}

}  // namespace detail

// Collapses every multi-branch RepVGG block into one 3x3 conv with bias.
// The result computes the same function as the eval-mode multi-branch model.
template <typename S>
BackboneModel<S> Reparameterize(const BackboneModel<S>& model, double bn_eps = BatchNormOptions{}.eps) {
  if (!model.is_repvgg()) throw StateError("re-parameterization applies to RepVGG models only");
  if (model.branches == Branches::kFused) throw StateError("model is already fused");
  if (model.mode != Mode::kEval) throw StateError("re-parameterization needs an eval-mode model");
  const auto& cfg = std::get<RepVGGConfig>(model.config);
  const auto widths = RepVGGStageWidths(cfg);

  BackboneModel<S> fused;
  fused.config = model.config;
  fused.mode = Mode::kEval;
  fused.branches = Branches::kFused;
  int in = 1;
  Eigen::Array<S, Eigen::Dynamic, 1> scale, shift;
  for (int s = 0; s < 5; ++s) {
    const int out = widths[static_cast<std::size_t>(s)];
    for (int b = 0; b < cfg.stage_depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string p = detail::BlockName("stage", s, b);
      Tensor<S> kernel(Shape{out, in, 3, 3}, true);
      Tensor<S> bias(Shape{out}, true);
      auto& k = kernel.value();
      auto at = [&](Index o, Index i, Index r, Index c) -> S& { return k[((o * in + i) * 3 + r) * 3 + c]; };

      detail::FoldBatchNorm(model, p + ".dense.bn", bn_eps, &scale, &shift);
      const auto& w3 = model.params.at(p + ".dense.conv.weight").value();
      for (Index o = 0; o < out; ++o)
        k.segment(o * in * 9, in * 9) = w3.segment(o * in * 9, in * 9) * scale[o];
      bias.value() = shift;

      detail::FoldBatchNorm(model, p + ".pointwise.bn", bn_eps, &scale, &shift);
      const auto& w1 = model.params.at(p + ".pointwise.conv.weight").value();
      for (Index o = 0; o < out; ++o)
        for (Index i = 0; i < in; ++i) at(o, i, 1, 1) += w1[o * in + i] * scale[o];
      bias.value() += shift;

      if (model.params.count(p + ".identity.bn.weight")) {
        detail::FoldBatchNorm(model, p + ".identity.bn", bn_eps, &scale, &shift);
        for (Index o = 0; o < out; ++o) at(o, o, 1, 1) += scale[o];
        bias.value() += shift;
      }
      fused.params.emplace(p + ".fused.weight", std::move(kernel));
      fused.params.emplace(p + ".fused.bias", std::move(bias));
      in = out;
    }
  }
  for (const char* name : {"embed.weight", "embed.bias"}) {
    const auto& t = model.params.at(name);
    fused.params.emplace(name, Tensor<S>(t.shape(), t.value(), true));
  }
  return fused;
}

}  // namespace spkv

#endif  // SPKV_NETS_H_
