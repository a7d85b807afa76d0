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
#ifndef ADVSEG_SEGMENTER_HPP_
#define ADVSEG_SEGMENTER_HPP_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "advseg/layers.hpp"
#include "advseg/losses.hpp"
#include "advseg/metrics.hpp"

namespace advseg {

struct UNetConfig {
  int depth = 4;
  int base_channels = 16;
  int num_classes = 4;
  std::uint64_t seed = 0;
};

/// 2D U-Net: per level two conv/batch-norm/rectifier blocks, max-pool down,
/// nearest upsample + conv up, skip concatenation, 1x1 head and channel softmax.
template <typename Scalar>
class UNet : public NetworkBase<UNet<Scalar>, Scalar> {
 public:
  UNet() = default;
  explicit UNet(const UNetConfig& cfg) : cfg_(cfg) {
    if (cfg.depth < 2) throw std::invalid_argument("build_unet: depth must be >= 2");
    if (cfg.base_channels < 1) throw std::invalid_argument("build_unet: base_channels must be >= 1");
    if (cfg.num_classes < 1) throw std::invalid_argument("build_unet: need at least one class");
    Rng rng(cfg.seed);
    int in = 1;
    for (int l = 0; l < cfg.depth; ++l) {
      const int ch = channels(l);
      const std::string p = "enc" + std::to_string(l);
      enc_a_.emplace_back(p + ".a", in, ch, 1, 0.0, rng);
      enc_b_.emplace_back(p + ".b", ch, ch, 1, 0.0, rng);
      in = ch;
    }
    for (int l = cfg.depth - 2; l >= 0; --l) {
      const int ch = channels(l);
      const std::string p = "dec" + std::to_string(l);
      up_.emplace_back(p + ".up", channels(l + 1), ch, 1, 0.0, rng);
      dec_a_.emplace_back(p + ".a", 2 * ch, ch, 1, 0.0, rng);
      dec_b_.emplace_back(p + ".b", ch, ch, 1, 0.0, rng);
    }
    head_ = Conv2d<Scalar>("head", channels(0), cfg.num_classes + 1, 1, 1, 0, true, rng, 1.0, 0.0);
  }

  const UNetConfig& config() const { return cfg_; }
  int num_classes() const { return cfg_.num_classes; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  /// Throws unless rows and cols are divisible by 2^(depth-1).
  void check_input(int rows, int cols) const {
    const int m = 1 << (cfg_.depth - 1);
    if (rows < m || cols < m || rows % m != 0 || cols % m != 0) {
      throw std::invalid_argument("segment: spatial size not divisible by " + std::to_string(m) + " (" +
                                  std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
  }

  /// Per-pixel class probabilities, N x (C+1) x H x W.
  Var<Scalar> forward(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    if (frozen_ && (mode.param_grads || mode.update_stats)) {
      throw std::logic_error("segmenter is frozen: parameters and statistics are immutable");
    }
    if (x.shape().c != 1) throw std::invalid_argument("segment: expected single-channel input");
    check_input(x.shape().h, x.shape().w);
    std::vector<Var<Scalar>> skips;
    Var<Scalar> h = x;
    for (int l = 0; l < cfg_.depth; ++l) {
      h = enc_b_[std::size_t(l)](g, enc_a_[std::size_t(l)](g, h, mode), mode);
      if (l + 1 < cfg_.depth) {
        skips.push_back(h);
        h = max_pool2(h);
      }
    }
    for (std::size_t k = 0; k < up_.size(); ++k) {
      h = up_[k](g, upsample2(h), mode);
      h = concat_channels(skips[skips.size() - 1 - k], h);
      h = dec_b_[k](g, dec_a_[k](g, h, mode), mode);
    }
    return softmax_channels(head_(g, h, mode));
  }

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
  template <class F>
  void visit_buffers(F&& f) {
    buffers_impl(*this, f);
  }
  template <class F>
  void visit_buffers(F&& f) const {
    buffers_impl(*this, f);
  }

 private:
  int channels(int level) const { return cfg_.base_channels << level; }

  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    for (auto& b : self.enc_a_) b.visit(f);
    for (auto& b : self.enc_b_) b.visit(f);
    for (auto& b : self.up_) b.visit(f);
    for (auto& b : self.dec_a_) b.visit(f);
    for (auto& b : self.dec_b_) b.visit(f);
    self.head_.visit(f);
  }
  template <class Self, class F>
  static void buffers_impl(Self& self, F& f) {
    for (auto& b : self.enc_a_) b.visit_buffers(f);
    for (auto& b : self.enc_b_) b.visit_buffers(f);
    for (auto& b : self.up_) b.visit_buffers(f);
    for (auto& b : self.dec_a_) b.visit_buffers(f);
    for (auto& b : self.dec_b_) b.visit_buffers(f);
  }

  UNetConfig cfg_;
  std::vector<ConvBlock<Scalar>> enc_a_, enc_b_, up_, dec_a_, dec_b_;
  Conv2d<Scalar> head_;
  bool frozen_ = false;
};

template <typename Scalar>
UNet<Scalar> build_unet(int depth, int base_channels, int num_classes, std::uint64_t seed) {
  return UNet<Scalar>(UNetConfig{depth, base_channels, num_classes, seed});
}

/// Inference-mode segmentation of one image.
template <typename Scalar>
SoftSegmentationT<Scalar> segment(const UNet<Scalar>& model, const ImageT<Scalar>& img) {
  Graph<Scalar> g;
  auto probs = model.forward(g, g.constant(image_tensor(img)), ForwardMode::eval());
  return {probs.value()};
}

/// Inference over a batch of equally-shaped images.
template <typename Scalar>
std::vector<SoftSegmentationT<Scalar>> segment_batch(const UNet<Scalar>& model, std::span<const ImageT<Scalar>> imgs) {
  Graph<Scalar> g;
  const Tensor<Scalar>& probs = model.forward(g, g.constant(stack_images(imgs)), ForwardMode::eval()).value();
  std::vector<SoftSegmentationT<Scalar>> out;
  const Shape s = probs.shape();
  for (int n = 0; n < s.n; ++n) {
    Tensor<Scalar> one({1, s.c, s.h, s.w});
    std::copy_n(probs.sample(n), s.sample(), one.data());
    out.push_back({std::move(one)});
  }
  return out;
}

/// Slices with hard labels, tagged by subject for per-subject aggregation.
struct SliceSet {
  std::vector<Image> images;
  std::vector<LabelGrid> labels;
  std::vector<std::string> subjects;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  void add(const Image& img, const LabelGrid& lbl, const std::string& subject) {
    images.push_back(img);
    labels.push_back(lbl);
    subjects.push_back(subject);
  }
};

/// Per-class Dice (index 0 = class 1) of the argmax segmentation against
/// ground truth, counts pooled per subject and averaged over subjects.
std::vector<double> evaluate_segmenter(const UNet<float>& model, const SliceSet& data, int num_classes);

struct SegTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::array<int, 2> patch_size{48, 48};
  int patches_per_slice = 4;
  std::uint64_t seed = 0;
};

struct SegEpochStats {
  int epoch = 0;
  double train_xent = 0;
  double val_dice = 0;  ///< mean over foreground classes
};

struct SegTrainResult {
  UNet<float> model;  ///< best-validation checkpoint, frozen
  std::vector<SegEpochStats> curve;
  int best_epoch = 0;
  double best_val_dice = 0;
};

/// Patch-based cross-entropy training with Adam; validation on full slices after every epoch.
SegTrainResult train_segmenter(UNet<float> model, const SliceSet& train, const SliceSet& val,
                               const SegTrainConfig& cfg);

}  // namespace advseg

#endif  // ADVSEG_SEGMENTER_HPP_
