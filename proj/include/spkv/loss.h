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

// Combined-margin softmax: the true-class logit of sample i is
//   s * (cos(theta_i + m1) - m2)
// and every other class j contributes s * cos(theta_j), where theta is the
// angle between the embedding and the class weight row.

#ifndef SPKV_LOSS_H_
#define SPKV_LOSS_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "spkv/ops.h"

namespace spkv {

struct MarginSchedule {
  enum class Kind { kLinear, kExponential };
  Kind kind = Kind::kLinear;
  double start = 0.0;
  double end = 0.0;
  long duration_iters = 1;

  static MarginSchedule Constant(double v) { return {Kind::kLinear, v, v, 1}; }
  static MarginSchedule Linear(double start, double end, long duration) {
    return {Kind::kLinear, start, end, duration};
  }
  static MarginSchedule Exponential(double start, double end, long duration) {
    return {Kind::kExponential, start, end, duration};
  }
};

void ValidateSchedule(const MarginSchedule& sched);

// linear: start + (end - start) * min(iter, T) / T
// exponential: start * (end / start)^(min(iter, T) / T)
// Returns end exactly once iter >= T.
double MarginAt(const MarginSchedule& sched, long iter);

// "linear:0:0.2:500", "exp:0.2:0.8:4000" or "const:0.1". When the duration
// is omitted, default_duration is used.
MarginSchedule ParseSchedule(const std::string& text, long default_duration);
std::string FormatSchedule(const MarginSchedule& sched);

template <typename S>
struct CMSoftmaxHead {
  Tensor<S> weight;  // [num_classes, D]; rows are used after normalization
  double scale = 32.0;
  double m1 = 0.0;  // angular margin, radians
  double m2 = 0.0;  // cosine margin

  Index num_classes() const { return weight.dim(0); }
  Index dim() const { return weight.dim(1); }
};

template <typename S>
void CheckHead(const CMSoftmaxHead<S>& head) {
  if (!head.weight.defined() || head.weight.ndim() != 2)
    throw ShapeError("classifier weight must be a [classes, dim] matrix");
  if (!(head.scale > 0.0)) throw ConfigError("scale s must be > 0");
  if (!(head.m1 >= 0.0 && head.m1 < std::numbers::pi / 2))
    throw ConfigError("angular margin m1 must lie in [0, pi/2)");
  if (!(head.m2 >= 0.0 && head.m2 < 1.0)) throw ConfigError("cosine margin m2 must lie in [0, 1)");
}

// Unit-norm random rows.
template <typename S>
CMSoftmaxHead<S> MakeHead(Index num_classes, Index dim, double scale, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw ConfigError("classifier needs >= 1 class and dim");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd w(dim, num_classes);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng);
  w.colwise().normalize();
  CMSoftmaxHead<S> head;
  head.weight = Tensor<S>(Shape{num_classes, dim},
                          Eigen::Map<const Eigen::ArrayXd>(w.data(), w.size()).cast<S>(), true);
  head.scale = scale;
  return head;
}

// Target-class cosine after the margins: cos(theta + m1) - m2 while
// theta + m1 <= pi, else cos(theta) - m1 * sin(m1) - m2, which keeps the
// logit monotone in theta.
inline double MarginCosine(double cosine, double m1, double m2) {
  const double c = std::clamp(cosine, -1.0, 1.0);
  if (c > std::cos(std::numbers::pi - m1)) {
    const double sine = std::sqrt(std::max(0.0, 1.0 - c * c));
    return c * std::cos(m1) - sine * std::sin(m1) - m2;
  }
  return c - m1 * std::sin(m1) - m2;
}

// Mean negative log-softmax over the batch, from a [N, K] cosine matrix.
template <typename S>
Tensor<S> MarginSoftmaxCrossEntropy(const Tensor<S>& cosines, const std::vector<int>& labels,
                                    double scale, double m1, double m2) {
  using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
  detail::CheckRank(cosines.shape(), 2, "cm_softmax", "cosines");
  const Index n = cosines.dim(0), k = cosines.dim(1);
  if (n < 1) throw ArgumentError("cm_softmax: empty batch");
  if (static_cast<Index>(labels.size()) != n)
    throw ArgumentError("cm_softmax: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " samples");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ArgumentError("cm_softmax: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(k) + ")");

  const double threshold = std::cos(std::numbers::pi - m1);
  const double min_sine = std::sqrt(std::numeric_limits<S>::epsilon());
  Arr probs(n * k), target_slope(n);
  double total = 0.0;
  Eigen::ArrayXd logits(k);
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < k; ++j) logits[j] = scale * static_cast<double>(cosines.value()[i * k + j]);
    const double c = std::clamp(static_cast<double>(cosines.value()[i * k + y]), -1.0, 1.0);
    logits[y] = scale * MarginCosine(c, m1, m2);
    if (c > threshold) {
      const double sine = std::max(std::sqrt(std::max(0.0, 1.0 - c * c)), min_sine);
      target_slope[i] = static_cast<S>(std::cos(m1) + c * std::sin(m1) / sine);
    } else {
      target_slope[i] = S(1);
    }
    Index top = 0;
    const double max = logits.maxCoeff(&top);
    double rest = 0.0;
    for (Index j = 0; j < k; ++j)
      if (j != top) rest += std::exp(logits[j] - max);
    const double lse = max + std::log1p(rest);
    if (top == y) {
      // log1p keeps full relative precision for tiny losses
      double others = 0.0;
      for (Index j = 0; j < k; ++j)
        if (j != y) others += std::exp(logits[j] - logits[y]);
      total += std::log1p(others);
    } else {
      total += lse - logits[y];
    }
    for (Index j = 0; j < k; ++j) probs[i * k + j] = static_cast<S>(std::exp(logits[j] - lse));
  }
  typename Tensor<S>::Array out = Tensor<S>::Array::Constant(1, static_cast<S>(total / n));
  return detail::MakeResult<S>(
      "cm_softmax", Shape{}, std::move(out), {cosines.node()},
      [=, probs = std::move(probs), target_slope = std::move(target_slope)](detail::Node<S>& self) {
        if (!self.inputs[0]->requires_grad) return;
        auto& gc = self.inputs[0]->EnsureGrad();
        const S g = self.grad[0] * S(scale) / S(n);
        for (Index i = 0; i < n; ++i) {
          const Index y = labels[static_cast<std::size_t>(i)];
          for (Index j = 0; j < k; ++j) {
            const S d = probs[i * k + j] - (j == y ? S(1) : S(0));
            gc[i * k + j] += g * d * (j == y ? target_slope[i] : S(1));
          }
        }
      });
}

// [N, K] cosines between l2-normalized embeddings and class rows.
template <typename S>
Tensor<S> ClassCosines(const Tensor<S>& embeddings, const CMSoftmaxHead<S>& head) {
  return Linear(L2Normalize(embeddings), L2Normalize(head.weight));
}

template <typename S>
Tensor<S> CMSoftmaxLoss(const Tensor<S>& embeddings, const std::vector<int>& labels,
                        const CMSoftmaxHead<S>& head) {
  CheckHead(head);
  if (embeddings.ndim() != 2 || embeddings.dim(1) != head.dim())
    throw ShapeError("embeddings " + ShapeString(embeddings.shape()) + " do not match classifier dim " +
                     std::to_string(head.dim()));
  return MarginSoftmaxCrossEntropy(ClassCosines(embeddings, head), labels, head.scale, head.m1,
                                   head.m2);
}

}  // namespace spkv

#endif  // SPKV_LOSS_H_
