/* Copyright 2026 The advseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef ADVSEG_LOSSES_HPP_
#define ADVSEG_LOSSES_HPP_

// Scalar objectives of the attack framework. Each loss has a kernel on raw
// (channel x pixel) buffers returning its value and optionally its gradient;
// the public functions and the tape ops both call the same kernels.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "advseg/ops.hpp"
#include "advseg/warp.hpp"

namespace advseg {

/// Per-pixel probability simplex over background + C classes, stored 1 x (C+1) x H x W.
template <typename Scalar>
struct SoftSegmentationT {
  Tensor<Scalar> probs;

  int channels() const { return probs.c(); }
  int num_classes() const { return probs.c() - 1; }
  int rows() const { return probs.h(); }
  int cols() const { return probs.w(); }
  Scalar operator()(int c, int r, int col) const { return probs(0, c, r, col); }

  /// One-hot encoding of a hard label grid with labels in [0, num_classes].
  static SoftSegmentationT one_hot(const LabelGrid& labels, int num_classes) {
    SoftSegmentationT s{Tensor<Scalar>({1, num_classes + 1, int(labels.rows()), int(labels.cols())})};
    for (Index i = 0; i < labels.size(); ++i) {
      const int l = labels.data()[i];
      if (l < 0 || l > num_classes) throw std::out_of_range("one_hot: label out of range");
      s.probs.plane(0, l)[i] = Scalar(1);
    }
    return s;
  }

  /// Largest deviation of a pixel's probability sum from one (inf if any entry is negative).
  Scalar simplex_error() const {
    Scalar worst = 0;
    const Index plane = probs.shape().plane();
    for (Index i = 0; i < plane; ++i) {
      Scalar sum = 0;
      for (int c = 0; c < channels(); ++c) {
        const Scalar p = probs.plane(0, c)[i];
        if (p < 0) return std::numeric_limits<Scalar>::infinity();
        sum += p;
      }
      worst = std::max(worst, std::abs(sum - Scalar(1)));
    }
    return worst;
  }
};
using SoftSegmentation = SoftSegmentationT<float>;

enum class NormMode { kMean, kSum };

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "mean") return NormMode::kMean;
  if (s == "sum") return NormMode::kSum;
  throw std::invalid_argument("norm_mode must be \"mean\" or \"sum\", got \"" + s + "\"");
}
inline std::string to_string(NormMode m) { return m == NormMode::kMean ? "mean" : "sum"; }

struct LossWeights {
  double lambda_d = 0.1;
  double lambda_v = 0.01;
  double xi = 2.0;
  NormMode norm_mode = NormMode::kMean;

  void validate() const {
    if (!(lambda_d >= 0) || !(lambda_v >= 0)) throw std::invalid_argument("lambda_D and lambda_V must be >= 0");
    if (!(xi >= 0)) throw std::invalid_argument("xi must be >= 0");
  }
};

/// Probability floor applied before every logarithm.
inline constexpr double kProbFloor = 1e-7;

namespace kernels {

template <typename Scalar>
inline Scalar clip_prob(Scalar p) {
  return std::clamp(p, Scalar(kProbFloor), Scalar(1));
}
template <typename Scalar>
inline bool clip_live(Scalar p) {
  return p > Scalar(kProbFloor) && p < Scalar(1);
}

/// Mean over pixels of -sum_c target(c) log pred(c). Gradients (scaled by
/// `gscale`) are accumulated into grad_pred when non-null.
template <typename Scalar>
Scalar xent(const Scalar* pred, const Scalar* target, int channels, Index pixels, Scalar* grad_pred = nullptr,
            Scalar gscale = 1) {
  Scalar total = 0;
  for (int c = 0; c < channels; ++c) {
    const Scalar* p = pred + Index(c) * pixels;
    const Scalar* t = target + Index(c) * pixels;
    for (Index i = 0; i < pixels; ++i) {
      if (t[i] == 0) continue;
      total -= t[i] * std::log(clip_prob(p[i]));
      if (grad_pred && clip_live(p[i])) grad_pred[Index(c) * pixels + i] -= gscale * t[i] / (p[i] * Scalar(pixels));
    }
  }
  return total / Scalar(pixels);
}

/// Mean over pixels of M * (-sum_c s0(c) log s_dv(c)), with M = sum_{c>=1} s0(c).
template <typename Scalar>
Scalar masked_xent(const Scalar* s_dv, const Scalar* s0, int channels, Index pixels, Scalar* grad_dv = nullptr,
                   Scalar* grad_s0 = nullptr, Scalar gscale = 1) {
  Scalar total = 0;
  for (Index i = 0; i < pixels; ++i) {
    Scalar mask = 0;
    for (int c = 1; c < channels; ++c) mask += s0[Index(c) * pixels + i];
    Scalar ent = 0;
    for (int c = 0; c < channels; ++c) ent -= s0[Index(c) * pixels + i] * std::log(clip_prob(s_dv[Index(c) * pixels + i]));
    total += mask * ent;
    if (grad_dv) {
      for (int c = 0; c < channels; ++c) {
        const Scalar p = s_dv[Index(c) * pixels + i];
        if (clip_live(p)) grad_dv[Index(c) * pixels + i] -= gscale * mask * s0[Index(c) * pixels + i] / (p * Scalar(pixels));
      }
    }
    if (grad_s0) {
      for (int c = 0; c < channels; ++c) {
        const Scalar logp = std::log(clip_prob(s_dv[Index(c) * pixels + i]));
        grad_s0[Index(c) * pixels + i] += gscale * ((c >= 1 ? ent : Scalar(0)) - mask * logp) / Scalar(pixels);
      }
    }
  }
  return total / Scalar(pixels);
}

/// lambda * (mean | sum) of x^2.
template <typename Scalar>
Scalar squared_norm(const Scalar* x, Index n, Scalar lambda, NormMode mode, Scalar* grad = nullptr, Scalar gscale = 1) {
  const Scalar denom = mode == NormMode::kMean ? Scalar(n) : Scalar(1);
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> xm(x, n);
  if (grad) Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(grad, n) += gscale * lambda * 2 * xm / denom;
  return lambda * xm.square().sum() / denom;
}

}  // namespace kernels

// Public loss functions.

/// lambda_D * (mean | sum) of squared displacements over both channels.
template <typename Scalar>
Scalar reg_deformation(const DeformationFieldT<Scalar>& d, Scalar lambda_d, NormMode mode) {
  const Tensor<Scalar> t = field_tensor(d);
  return kernels::squared_norm(t.data(), t.size(), lambda_d, mode);
}

/// lambda_V * (mean | sum) of squared intensity perturbation.
template <typename Scalar>
Scalar reg_intensity(const ImageT<Scalar>& v, Scalar lambda_v, NormMode mode) {
  return kernels::squared_norm(v.data(), v.size(), lambda_v, mode);
}

template <typename Scalar>
struct WganLosses {
  Scalar gen;
  Scalar disc;
};

/// Wasserstein pair from batch-mean critic scores on clean and attacked images.
template <typename Scalar>
WganLosses<Scalar> wgan_pair(Scalar score_real, Scalar score_fake) {
  return {score_real - score_fake, score_fake - score_real};
}

template <typename Scalar>
void require_same_shape(const SoftSegmentationT<Scalar>& a, const SoftSegmentationT<Scalar>& b, const char* what) {
  if (!(a.probs.shape() == b.probs.shape())) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// Mean per-pixel cross-entropy of `pred` against `target` (natural log).
template <typename Scalar>
Scalar xent(const SoftSegmentationT<Scalar>& pred, const SoftSegmentationT<Scalar>& target) {
  require_same_shape(pred, target, "xent");
  return kernels::xent(pred.probs.data(), target.probs.data(), pred.channels(), pred.probs.shape().plane());
}

/// Foreground-masked cross-entropy: mask and weights from the clean prediction
/// s_0, logarithm of the attacked prediction s_dv.
template <typename Scalar>
Scalar masked_xent(const SoftSegmentationT<Scalar>& s_dv, const SoftSegmentationT<Scalar>& s_0) {
  require_same_shape(s_dv, s_0, "masked_xent");
  return kernels::masked_xent(s_dv.probs.data(), s_0.probs.data(), s_0.channels(), s_0.probs.shape().plane());
}

/// (xi - m)^2 for a masked cross-entropy value m.
template <typename Scalar>
Scalar target_loss_value(Scalar masked, Scalar xi) {
  if (!(xi >= 0)) throw std::invalid_argument("target_loss: xi must be >= 0");
  return (xi - masked) * (xi - masked);
}

template <typename Scalar>
Scalar target_loss(const SoftSegmentationT<Scalar>& s_0, const SoftSegmentationT<Scalar>& s_dv, Scalar xi) {
  return target_loss_value(masked_xent(s_dv, s_0), xi);
}

template <typename Scalar>
struct LossComponents {
  Scalar gen_adv = 0;
  Scalar disc_adv = 0;
  Scalar target = 0;
  Scalar reg_d = 0;
  Scalar reg_v = 0;
};

template <typename Scalar>
struct TotalLosses {
  Scalar gen;
  Scalar disc;
};

/// Generator objective is the plain sum of its four terms; the critic objective is its adversarial term.
template <typename Scalar>
TotalLosses<Scalar> total_losses(const LossComponents<Scalar>& c) {
  return {c.gen_adv + c.target + c.reg_d + c.reg_v, c.disc_adv};
}

// Tape ops.

/// Per-sample masked cross-entropy, N x 1 x 1 x 1. s_0 is treated as a constant.
template <typename Scalar>
Var<Scalar> masked_xent_op(const Var<Scalar>& s_dv, const Var<Scalar>& s_0) {
  detail::require(s_dv.shape() == s_0.shape(), "masked_xent: shape mismatch");
  Graph<Scalar>& g = *s_dv.graph();
  const Shape s = s_dv.shape();
  Tensor<Scalar> out({s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    out.data()[n] = kernels::masked_xent(s_dv.value().sample(n), s_0.value().sample(n), s.c, s.plane());
  }
  return g.record(std::move(out), {s_dv}, [&g, s_dv, s_0](const Tensor<Scalar>& go) {
    const Shape s = s_dv.shape();
    for (int n = 0; n < s.n; ++n) {
      kernels::masked_xent(s_dv.value().sample(n), s_0.value().sample(n), s.c, s.plane(),
                           g.grad_buffer(s_dv).sample(n), static_cast<Scalar*>(nullptr), go.data()[n]);
    }
  });
}

/// Batch mean of per-sample cross-entropy against a constant target.
template <typename Scalar>
Var<Scalar> xent_op(const Var<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::require(pred.shape() == target.shape(), "xent: shape mismatch");
  Graph<Scalar>& g = *pred.graph();
  const Shape s = pred.shape();
  Scalar total = 0;
  for (int n = 0; n < s.n; ++n) total += kernels::xent(pred.value().sample(n), target.sample(n), s.c, s.plane());
  return g.record(Tensor<Scalar>({1, 1, 1, 1}, total / Scalar(s.n)), {pred},
                  [&g, pred, target](const Tensor<Scalar>& go) {
    const Shape s = pred.shape();
    for (int n = 0; n < s.n; ++n) {
      kernels::xent(pred.value().sample(n), target.sample(n), s.c, s.plane(), g.grad_buffer(pred).sample(n),
                    go.data()[0] / Scalar(s.n));
    }
  });
}

/// Batch mean of (xi - m_n)^2 over per-sample masked cross-entropies m.
template <typename Scalar>
Var<Scalar> target_loss_op(const Var<Scalar>& masked, Scalar xi) {
  Graph<Scalar>& g = *masked.graph();
  const Index n = masked.value().size();
  const Scalar value = (xi - masked.value().array()).square().sum() / Scalar(n);
  return g.record(Tensor<Scalar>({1, 1, 1, 1}, value), {masked}, [&g, masked, xi, n](const Tensor<Scalar>& go) {
    g.grad_buffer(masked).array() += go.data()[0] * Scalar(-2) * (xi - masked.value().array()) / Scalar(n);
  });
}

/// Batch mean of the per-sample regularizer lambda * (mean | sum) x^2.
template <typename Scalar>
Var<Scalar> squared_norm_op(const Var<Scalar>& x, Scalar lambda, NormMode mode) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  Scalar total = 0;
  for (int n = 0; n < s.n; ++n) total += kernels::squared_norm(x.value().sample(n), s.sample(), lambda, mode);
  return g.record(Tensor<Scalar>({1, 1, 1, 1}, total / Scalar(s.n)), {x},
                  [&g, x, lambda, mode](const Tensor<Scalar>& go) {
    const Shape s = x.shape();
    for (int n = 0; n < s.n; ++n) {
      kernels::squared_norm(x.value().sample(n), s.sample(), lambda, mode, g.grad_buffer(x).sample(n),
                            go.data()[0] / Scalar(s.n));
    }
  });
}

}  // namespace advseg

#endif  // ADVSEG_LOSSES_HPP_
