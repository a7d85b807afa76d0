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
#include "advseg/segmenter.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "advseg/optim.hpp"
#include "advseg/tensorio.hpp"

namespace advseg {

std::vector<double> evaluate_segmenter(const UNet<float>& model, const SliceSet& data, int num_classes) {
  std::map<std::string, std::vector<DiceCounts>> per_subject;
  constexpr std::size_t kBatch = 16;
  for (std::size_t start = 0; start < data.size(); start += kBatch) {
    const std::size_t n = std::min(kBatch, data.size() - start);
    const auto probs = segment_batch<float>(model, std::span<const Image>(data.images.data() + start, n));
    for (std::size_t k = 0; k < n; ++k) {
      const LabelGrid pred = argmax_labels(probs[k]);
      auto& counts = per_subject[data.subjects[start + k]];
      counts.resize(std::size_t(num_classes));
      for (int c = 1; c <= num_classes; ++c) counts[std::size_t(c - 1)] += dice_counts(pred, data.labels[start + k], c);
    }
  }
  std::vector<double> mean(std::size_t(num_classes), 0.0);
  if (per_subject.empty()) return mean;
  for (const auto& [id, counts] : per_subject) {
    for (int c = 0; c < num_classes; ++c) mean[std::size_t(c)] += counts[std::size_t(c)].value();
  }
  for (double& m : mean) m /= double(per_subject.size());
  return mean;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

SegTrainResult train_segmenter(UNet<float> model, const SliceSet& train, const SliceSet& val,
                               const SegTrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_segmenter: empty training set");
  if (model.frozen()) throw std::logic_error("train_segmenter: model is frozen");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.patches_per_slice < 1) {
    throw std::invalid_argument("train_segmenter: invalid configuration");
  }
  const int classes = model.num_classes();
  model.check_input(cfg.patch_size[0], cfg.patch_size[1]);

  SegTrainResult result;
  const SliceSet& selection = val.empty() ? train : val;
  result.model = model;
  result.best_val_dice = mean_of(evaluate_segmenter(model, selection, classes));
  result.curve.push_back({0, 0.0, result.best_val_dice});

  std::mt19937_64 rng(cfg.seed);
  Adam<float> opt(model.parameters(), float(cfg.learning_rate));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Patch> patches;
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto p = extract_patches(train.images[i], train.labels[i], cfg.patch_size, cfg.patches_per_slice, rng);
      patches.insert(patches.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    std::shuffle(patches.begin(), patches.end(), rng);

    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < patches.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t n = std::min(std::size_t(cfg.batch_size), patches.size() - start);
      std::vector<Image> imgs;
      Tensor<float> target({int(n), classes + 1, cfg.patch_size[0], cfg.patch_size[1]});
      for (std::size_t k = 0; k < n; ++k) {
        const Patch& p = patches[start + k];
        imgs.push_back(p.image);
        for (Index i = 0; i < p.labels.size(); ++i) target.plane(int(k), p.labels.data()[i])[i] = 1.0f;
      }
      Graph<float> g;
      auto probs = model.forward(g, g.constant(stack_images<float>(imgs)), ForwardMode::train());
      auto loss = xent_op(probs, target);
      opt.zero_grad();
      g.backward(loss);
      opt.step();
      loss_sum += loss.value().data()[0];
      ++batches;
    }
    const double val_dice = mean_of(evaluate_segmenter(model, selection, classes));
    result.curve.push_back({epoch, loss_sum / std::max(batches, 1), val_dice});
    if (val_dice > result.best_val_dice || epoch == 1) {
      result.best_val_dice = val_dice;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  result.model.freeze();
  return result;
}

}  // namespace advseg
