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

// The fixed operator set needed by the backbones: conv2d, batch norm,
// relu/add/scale, linear and row-wise l2 normalization, plus the sum and
// elementwise product reductions used to form test objectives.
// Layouts are row-major: [N, C, H, W] for maps, [N, D] for batches of vectors.

#ifndef SPKV_OPS_H_
#define SPKV_OPS_H_

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "spkv/tensor.h"

namespace spkv {

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
};

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;  // running = (1 - momentum) * running + momentum * batch
  double eps = 1e-5;
};

namespace detail {

inline void CheckSameShape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a) + " vs " +
                     ShapeString(b));
}

inline void CheckRank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + ShapeString(s));
}

// col is (out_h * out_w) x (C * kh * kw), column-major.
template <typename S>
void Im2Col(const S* x, Index channels, Index height, Index width, Index kh, Index kw,
            int stride, int pad, Index out_h, Index out_w, S* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    const S* src = x + c * height * width;
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        S* dst = col + ((c * kh + i) * kw + j) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + i;
          S* row = dst + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(row, row + out_w, S(0));
            continue;
          }
          const S* src_row = src + ih * width;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + j;
            row[ow] = (iw >= 0 && iw < width) ? src_row[iw] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void Col2ImAdd(const S* col, Index channels, Index height, Index width, Index kh, Index kw,
               int stride, int pad, Index out_h, Index out_w, S* x) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    S* dst = x + c * height * width;
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const S* src = col + ((c * kh + i) * kw + j) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + i;
          if (ih < 0 || ih >= height) continue;
          const S* row = src + oh * out_w;
          S* dst_row = dst + ih * width;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + j;
            if (iw >= 0 && iw < width) dst_row[iw] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation. bias may be an undefined Tensor.
template <typename S>
Tensor<S> Conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 Conv2dOptions opt = {}) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  detail::CheckRank(x.shape(), 4, "conv2d", "input");
  detail::CheckRank(weight.shape(), 4, "conv2d", "weight");
  if (opt.stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (opt.pad < 0) throw ArgumentError("conv2d: padding must be >= 0");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c)
    throw ShapeError("conv2d: weight " + ShapeString(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(c));
  if (h + 2 * opt.pad < kh || w + 2 * opt.pad < kw)
    throw ShapeError("conv2d: kernel larger than padded input " + ShapeString(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{o})
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(o) + "]");
  const Index out_h = (h + 2 * opt.pad - kh) / opt.stride + 1;
  const Index out_w = (w + 2 * opt.pad - kw) / opt.stride + 1;
  const Index plane = out_h * out_w, ckk = c * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.pad == 0;

  typename Tensor<S>::Array out(n * o * plane);
  Eigen::Map<const Mat> wm(weight.value().data(), ckk, o);
  Mat col(pointwise ? 0 : plane, pointwise ? 0 : ckk);
  for (Index b = 0; b < n; ++b) {
    const S* xb = x.value().data() + b * c * h * w;
    Eigen::Map<Mat> yb(out.data() + b * o * plane, plane, o);
    if (pointwise) {
      yb.noalias() = Eigen::Map<const Mat>(xb, plane, c) * wm;
    } else {
      detail::Im2Col(xb, c, h, w, kh, kw, opt.stride, opt.pad, out_h, out_w, col.data());
      yb.noalias() = col * wm;
    }
    if (has_bias)
      yb.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data(), o);
  }

  std::vector<typename Tensor<S>::NodePtr> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return detail::MakeResult<S>(
      "conv2d", Shape{n, o, out_h, out_w}, std::move(out), std::move(inputs),
      [=](detail::Node<S>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        Eigen::Map<const Mat> wmat(wn.value.data(), ckk, o);
        Mat col_b(pointwise ? 0 : plane, pointwise ? 0 : ckk);
        Mat dcol;
        for (Index b = 0; b < n; ++b) {
          Eigen::Map<const Mat> gy(self.grad.data() + b * o * plane, plane, o);
          const S* xb = xn.value.data() + b * c * h * w;
          if (wn.requires_grad) {
            Eigen::Map<Mat> gw(wn.EnsureGrad().data(), ckk, o);
            if (pointwise) {
              gw.noalias() += Eigen::Map<const Mat>(xb, plane, c).transpose() * gy;
            } else {
              detail::Im2Col(xb, c, h, w, kh, kw, opt.stride, opt.pad, out_h, out_w, col_b.data());
              gw.noalias() += col_b.transpose() * gy;
            }
          }
          if (xn.requires_grad) {
            S* gx = xn.EnsureGrad().data() + b * c * h * w;
            if (pointwise) {
              Eigen::Map<Mat>(gx, plane, c).noalias() += gy * wmat.transpose();
            } else {
              dcol.noalias() = gy * wmat.transpose();
              detail::Col2ImAdd(dcol.data(), c, h, w, kh, kw, opt.stride, opt.pad, out_h, out_w, gx);
            }
          }
          if (has_bias && self.inputs[2]->requires_grad) {
            Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> gb(self.inputs[2]->EnsureGrad().data(), o);
            gb += gy.colwise().sum();
          }
        }
      });
}

template <typename S>
Tensor<S> Conv2d(const Tensor<S>& x, const Tensor<S>& weight, Conv2dOptions opt = {}) {
  return Conv2d(x, weight, Tensor<S>(), opt);
}

// Per-channel normalization over (N, H, W). Training mode normalizes with
// batch statistics and updates the running buffers in place (the running
// variance uses the unbiased batch estimate); eval mode uses the buffers.
template <typename S>
Tensor<S> BatchNorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, BatchNormOptions opt = {}) {
  using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
  detail::CheckRank(x.shape(), 4, "batchnorm2d", "input");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor<S>* t : std::initializer_list<const Tensor<S>*>{&gamma, &beta, &running_mean, &running_var})
    if (t->shape() != Shape{c})
      throw ShapeError("batchnorm2d: per-channel tensors must have shape [" + std::to_string(c) +
                       "], got " + ShapeString(t->shape()));
  const Index count = n * hw;
  if (opt.training && count < 2)
    throw ArgumentError("batchnorm2d: training mode needs more than one value per channel");
  if (count == 0) throw ArgumentError("batchnorm2d: empty batch");

  Vec mean(c), inv_std(c);
  if (opt.training) {
    mean.setZero();
    Vec var = Vec::Zero(c);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch)
        mean[ch] += x.value().segment((b * c + ch) * hw, hw).sum();
    mean /= S(count);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch)
        var[ch] += (x.value().segment((b * c + ch) * hw, hw) - mean[ch]).square().sum();
    var /= S(count);
    inv_std = (var + S(opt.eps)).rsqrt();
    const S m = S(opt.momentum);
    running_mean.value() = (S(1) - m) * running_mean.value() + m * mean;
    running_var.value() =
        (S(1) - m) * running_var.value() + m * var * (S(count) / S(count - 1));
  } else {
    mean = running_mean.value();
    inv_std = (running_var.value() + S(opt.eps)).rsqrt();
  }

  typename Tensor<S>::Array xhat(x.size()), out(x.size());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * hw;
      xhat.segment(off, hw) = (x.value().segment(off, hw) - mean[ch]) * inv_std[ch];
      out.segment(off, hw) = gamma.value()[ch] * xhat.segment(off, hw) + beta.value()[ch];
    }
  }
  const bool training = opt.training;
  return detail::MakeResult<S>(
      "batchnorm2d", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [=, xhat = std::move(xhat)](detail::Node<S>& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        Vec sum_g = Vec::Zero(c), sum_gx = Vec::Zero(c);
        for (Index b = 0; b < n; ++b) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * hw;
            sum_g[ch] += self.grad.segment(off, hw).sum();
            sum_gx[ch] += (self.grad.segment(off, hw) * xhat.segment(off, hw)).sum();
          }
        }
        if (gn.requires_grad) gn.EnsureGrad() += sum_gx;
        if (bn.requires_grad) bn.EnsureGrad() += sum_g;
        if (!xn.requires_grad) return;
        auto& gx = xn.EnsureGrad();
        const S inv_count = S(1) / S(count);
        for (Index b = 0; b < n; ++b) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * hw;
            const S scale = gn.value[ch] * inv_std[ch];
            if (training) {
              gx.segment(off, hw) += scale * (self.grad.segment(off, hw) - sum_g[ch] * inv_count -
                                              xhat.segment(off, hw) * (sum_gx[ch] * inv_count));
            } else {
              gx.segment(off, hw) += scale * self.grad.segment(off, hw);
            }
          }
        }
      });
}

// relu'(0) is taken as 0.
template <typename S>
Tensor<S> Relu(const Tensor<S>& x) {
  return detail::MakeResult<S>("relu", x.shape(), x.value().max(S(0)), {x.node()},
                               [](detail::Node<S>& self) {
                                 auto& xn = *self.inputs[0];
                                 if (xn.requires_grad) xn.EnsureGrad() += (xn.value > S(0)).select(self.grad, S(0));
                               });
}

template <typename S>
Tensor<S> Add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::CheckSameShape(a.shape(), b.shape(), "add");
  return detail::MakeResult<S>("add", a.shape(), a.value() + b.value(), {a.node(), b.node()},
                               [](detail::Node<S>& self) {
                                 for (auto& in : self.inputs)
                                   if (in->requires_grad) in->EnsureGrad() += self.grad;
                               });
}

template <typename S>
Tensor<S> Scale(const Tensor<S>& x, S factor) {
  return detail::MakeResult<S>("scale", x.shape(), x.value() * factor, {x.node()},
                               [factor](detail::Node<S>& self) {
                                 if (self.inputs[0]->requires_grad) self.inputs[0]->EnsureGrad() += factor * self.grad;
                               });
}

template <typename S>
Tensor<S> Mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::CheckSameShape(a.shape(), b.shape(), "mul");
  return detail::MakeResult<S>("mul", a.shape(), a.value() * b.value(), {a.node(), b.node()},
                               [](detail::Node<S>& self) {
                                 auto& an = *self.inputs[0];
                                 auto& bn = *self.inputs[1];
                                 if (an.requires_grad) an.EnsureGrad() += self.grad * bn.value;
                                 if (bn.requires_grad) bn.EnsureGrad() += self.grad * an.value;
                               });
}

template <typename S>
Tensor<S> Sum(const Tensor<S>& x) {
  return detail::MakeResult<S>("sum", Shape{}, Tensor<S>::Array::Constant(1, x.value().sum()),
                               {x.node()}, [](detail::Node<S>& self) {
                                 if (self.inputs[0]->requires_grad) self.inputs[0]->EnsureGrad() += self.grad[0];
                               });
}

// x[N, D] * weight[K, D]^T + bias[K]; bias may be undefined.
template <typename S>
Tensor<S> Linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias = Tensor<S>()) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  detail::CheckRank(x.shape(), 2, "linear", "input");
  detail::CheckRank(weight.shape(), 2, "linear", "weight");
  const Index n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  if (weight.dim(1) != d)
    throw ShapeError("linear: input " + ShapeString(x.shape()) + " incompatible with weight " +
                     ShapeString(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{k})
    throw ShapeError("linear: bias must have shape [" + std::to_string(k) + "]");
  typename Tensor<S>::Array out(n * k);
  Eigen::Map<Mat> yt(out.data(), k, n);
  yt.noalias() = Eigen::Map<const Mat>(weight.value().data(), d, k).transpose() *
                 Eigen::Map<const Mat>(x.value().data(), d, n);
  if (has_bias) yt.colwise() += bias.value().matrix();
  std::vector<typename Tensor<S>::NodePtr> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return detail::MakeResult<S>(
      "linear", Shape{n, k}, std::move(out), std::move(inputs), [=](detail::Node<S>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        Eigen::Map<const Mat> gy(self.grad.data(), k, n);
        if (xn.requires_grad)
          Eigen::Map<Mat>(xn.EnsureGrad().data(), d, n).noalias() +=
              Eigen::Map<const Mat>(wn.value.data(), d, k) * gy;
        if (wn.requires_grad)
          Eigen::Map<Mat>(wn.EnsureGrad().data(), d, k).noalias() +=
              Eigen::Map<const Mat>(xn.value.data(), d, n) * gy.transpose();
        if (has_bias && self.inputs[2]->requires_grad)
          self.inputs[2]->EnsureGrad() += gy.rowwise().sum().array();
      });
}

// Each row of x[N, D] divided by max(||row||, eps).
template <typename S>
Tensor<S> L2Normalize(const Tensor<S>& x, S eps = S(1e-12)) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  detail::CheckRank(x.shape(), 2, "l2_normalize", "input");
  const Index n = x.dim(0), d = x.dim(1);
  Eigen::Map<const Mat> xt(x.value().data(), d, n);
  Eigen::Array<S, Eigen::Dynamic, 1> norms = xt.colwise().norm().transpose().array();
  typename Tensor<S>::Array out(x.size());
  Eigen::Map<Mat> yt(out.data(), d, n);
  for (Index i = 0; i < n; ++i) yt.col(i) = xt.col(i) / std::max(norms[i], eps);
  return detail::MakeResult<S>(
      "l2_normalize", x.shape(), std::move(out), {x.node()},
      [=, norms = std::move(norms)](detail::Node<S>& self) {
        auto& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Eigen::Map<const Mat> gy(self.grad.data(), d, n);
        Eigen::Map<const Mat> y(self.value.data(), d, n);
        Eigen::Map<Mat> gx(xn.EnsureGrad().data(), d, n);
        for (Index i = 0; i < n; ++i) {
          if (norms[i] > eps)
            gx.col(i) += (gy.col(i) - y.col(i) * y.col(i).dot(gy.col(i))) / norms[i];
          else
            gx.col(i) += gy.col(i) / eps;
        }
      });
}

}  // namespace spkv

#endif  // SPKV_OPS_H_
