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
#include <gtest/gtest.h>

#include <random>

#include "advseg/segmenter.hpp"
#include "advseg/tensorio.hpp"

namespace advseg {
namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  Image img(h, w);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = n(rng);
  return img;
}

TEST(UNetTest, OutputShape) {
  const auto model = build_unet<float>(4, 16, 4, 0);
  const auto s = segment(model, random_image(64, 64, 1));
  EXPECT_EQ(s.probs.shape(), (Shape{1, 5, 64, 64}));
}

TEST(UNetTest, SpatialSizeNotDivisible) {
  const auto model = build_unet<float>(4, 4, 2, 0);
  try {
    segment(model, random_image(50, 50, 1));
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("spatial size not divisible"), std::string::npos);
  }
  EXPECT_THROW(build_unet<float>(1, 4, 2, 0), std::invalid_argument);
}

TEST(UNetTest, SeededInitialization) {
  EXPECT_EQ(build_unet<float>(3, 8, 2, 5).state_hash(), build_unet<float>(3, 8, 2, 5).state_hash());
  EXPECT_NE(build_unet<float>(3, 8, 2, 5).state_hash(), build_unet<float>(3, 8, 2, 6).state_hash());
}

TEST(UNetTest, SimplexAndInferenceDeterminism) {
  const auto model = build_unet<float>(3, 8, 3, 2);
  const Image img = random_image(32, 32, 3);
  const auto a = segment(model, img);
  const auto b = segment(model, img);
  EXPECT_LT(a.simplex_error(), 1e-5f);
  EXPECT_TRUE((a.probs.array() == b.probs.array()).all());
  const std::vector<Image> batch{img, random_image(32, 32, 4)};
  const auto many = segment_batch<float>(model, batch);
  ASSERT_EQ(many.size(), 2u);
  EXPECT_LT((many[0].probs.array() - a.probs.array()).abs().maxCoeff(), 1e-6f);
}

TEST(UNetTest, FrozenRejectsTrainingPasses) {
  auto model = build_unet<float>(2, 4, 1, 0);
  model.freeze();
  Graph<float> g;
  auto x = g.constant(image_tensor(random_image(8, 8, 0)));
  EXPECT_THROW(model.forward(g, x, ForwardMode::train()), std::logic_error);
  EXPECT_NO_THROW(model.forward(g, x, ForwardMode::eval()));
}

SliceSet phantom_slices(std::uint64_t seed, int n, int classes) {
  SliceSet set;
  for (int i = 0; i < n; ++i) {
    const Phantom p = make_phantom(seed + i, {32, 32}, classes);
    const double mean = p.image.mean();
    const double sd = std::sqrt((p.image - mean).square().mean());
    set.add(((p.image - mean) / sd).eval(), p.labels, "s" + std::to_string(i));
  }
  return set;
}

TEST(TrainSegmenterTest, ZeroEpochsReturnsFrozenInit) {
  const SliceSet data = phantom_slices(0, 2, 2);
  auto init = build_unet<float>(3, 4, 2, 0);
  const auto hash = init.state_hash();
  SegTrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train_segmenter(init, data, data, cfg);
  EXPECT_TRUE(r.model.frozen());
  EXPECT_EQ(r.model.state_hash(), hash);
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_EQ(r.curve.front().epoch, 0);
}

TEST(TrainSegmenterTest, EmptyTrainingSet) {
  EXPECT_THROW(train_segmenter(build_unet<float>(2, 4, 1, 0), SliceSet{}, SliceSet{}, SegTrainConfig{}),
               std::invalid_argument);
}

TEST(TrainSegmenterTest, SingleImageOverfits) {
  const SliceSet one = phantom_slices(7, 1, 2);
  SegTrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 4;
  cfg.patch_size = {32, 32};
  cfg.patches_per_slice = 4;
  cfg.learning_rate = 3e-3;
  const auto r = train_segmenter(build_unet<float>(3, 8, 2, 1), one, one, cfg);
  const auto dice = evaluate_segmenter(r.model, one, 2);
  const double mean_fg = (dice[0] + dice[1]) / 2;
  EXPECT_GE(mean_fg, 0.95);
  ASSERT_EQ(r.curve.size(), 61u);
  EXPECT_LT(r.curve.back().train_xent, r.curve[1].train_xent);
}

}  // namespace
}  // namespace advseg
