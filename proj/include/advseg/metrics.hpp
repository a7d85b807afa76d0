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
#ifndef ADVSEG_METRICS_HPP_
#define ADVSEG_METRICS_HPP_

#include <stdexcept>

#include "advseg/losses.hpp"

namespace advseg {

/// Relative Dice drop that counts as a successful attack.
inline constexpr double kSuccessRatio = 0.7;

/// Overlap counts for one class, accumulable across slices.
struct DiceCounts {
  Index pred = 0;
  Index truth = 0;
  Index overlap = 0;

  DiceCounts& operator+=(const DiceCounts& o) {
    pred += o.pred;
    truth += o.truth;
    overlap += o.overlap;
    return *this;
  }
  /// 2|P n G| / (|P| + |G|); 1 when both masks are empty.
  double value() const { return pred + truth == 0 ? 1.0 : 2.0 * double(overlap) / double(pred + truth); }
};

inline DiceCounts dice_counts(const LabelGrid& pred, const LabelGrid& truth, int class_id) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw std::invalid_argument("dice: shape mismatch");
  DiceCounts c;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] == class_id;
    const bool g = truth.data()[i] == class_id;
    c.pred += p;
    c.truth += g;
    c.overlap += p && g;
  }
  return c;
}

inline double dice(const LabelGrid& pred, const LabelGrid& truth, int class_id) {
  return dice_counts(pred, truth, class_id).value();
}

/// Mean absolute difference between attacked and clean image.
template <typename Scalar>
Scalar perceptibility(const ImageT<Scalar>& attacked, const ImageT<Scalar>& clean) {
  if (attacked.rows() != clean.rows() || attacked.cols() != clean.cols()) {
    throw std::invalid_argument("perceptibility: shape mismatch");
  }
  return (attacked - clean).abs().mean();
}

/// True iff the attacked Dice fell below 70% of the baseline.
inline bool attack_success(double baseline_dice, double attacked_dice) {
  return attacked_dice < kSuccessRatio * baseline_dice;
}

/// Per-pixel argmax, ties to the lowest class index.
template <typename Scalar>
LabelGrid argmax_labels(const SoftSegmentationT<Scalar>& s) {
  LabelGrid out = LabelGrid::Zero(s.rows(), s.cols());
  const Index plane = s.probs.shape().plane();
  for (Index i = 0; i < plane; ++i) {
    Scalar best = s.probs.plane(0, 0)[i];
    for (int c = 1; c < s.channels(); ++c) {
      const Scalar p = s.probs.plane(0, c)[i];
      if (p > best) {
        best = p;
        out.data()[i] = c;
      }
    }
  }
  return out;
}

}  // namespace advseg

#endif  // ADVSEG_METRICS_HPP_
