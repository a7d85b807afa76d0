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

#include <cmath>
#include <limits>
#include <random>

#include "advseg/ops.hpp"
#include "advseg/warp.hpp"
#include "test_util.hpp"

namespace advseg {
namespace {

using ImageD = ImageT<double>;
using FieldD = DeformationFieldT<double>;

ImageD smooth_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.5);
  const double a = u(rng), b = u(rng), c = u(rng);
  ImageD img(h, w);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) img(r, col) = std::sin(a * r) + std::cos(b * col) + 0.3 * std::sin(c * (r + col));
  }
  return img;
}

// Integer offset plus a fractional part in [0.05, 0.95], so every sample
// coordinate stays clear of the integer grid (and therefore of the border kinks).
FieldD off_grid_field(int h, int w, std::mt19937_64& rng, int max_shift) {
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  FieldD d = FieldD::zeros(h, w);
  for (Index i = 0; i < d.dx.size(); ++i) {
    d.dx.data()[i] = shift(rng) + frac(rng);
    d.dy.data()[i] = shift(rng) + frac(rng);
  }
  return d;
}

TEST(WarpTest, ZeroFieldIsExactIdentity) {
  std::mt19937_64 rng(1);
  const ImageD img = ::advseg::testing::random_tensor({1, 1, 9, 7}, rng).plane_map(0, 0);
  const ImageD out = apply_deformation(img, FieldD::zeros(9, 7));
  EXPECT_TRUE((out == img).all());
}

TEST(WarpTest, HalfPixelHandValues) {
  ImageD img(1, 2);
  img << 0.0, 1.0;
  FieldD d = FieldD::zeros(1, 2);
  d.dx.setConstant(0.5);
  const ImageD out = apply_deformation(img, d);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 1.0);
}

TEST(WarpTest, IntegerShiftOnRamp) {
  const int h = 5, w = 6;
  ImageD ramp(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) ramp(r, c) = 10.0 * r + c;
  FieldD d = FieldD::zeros(h, w);
  d.dx.setOnes();
  const ImageD out = apply_deformation(ramp, d);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) EXPECT_DOUBLE_EQ(out(r, c), ramp(r, std::min(c + 1, w - 1)));
  }
}

TEST(WarpTest, ShiftEquivarianceOnInterior) {
  std::mt19937_64 rng(2);
  const int h = 12, w = 10;
  const ImageD img = ::advseg::testing::random_tensor({1, 1, h, w}, rng).plane_map(0, 0);
  for (int sy = -2; sy <= 2; ++sy) {
    for (int sx = -2; sx <= 2; ++sx) {
      FieldD d = FieldD::zeros(h, w);
      d.dx.setConstant(sx);
      d.dy.setConstant(sy);
      const ImageD out = apply_deformation(img, d);
      for (int r = 2; r < h - 2; ++r)
        for (int c = 2; c < w - 2; ++c) EXPECT_DOUBLE_EQ(out(r, c), img(r + sy, c + sx));
    }
  }
}

TEST(WarpTest, NoOvershoot) {
  std::mt19937_64 rng(3);
  const int h = 16, w = 16;
  const ImageD img = ::advseg::testing::random_tensor({1, 1, h, w}, rng, -3, 3).plane_map(0, 0);
  const FieldD d = off_grid_field(h, w, rng, 3);
  const ImageD out = apply_deformation(img, d);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double y = std::clamp(r + d.dy(r, c), 0.0, double(h - 1));
      const double x = std::clamp(c + d.dx(r, c), 0.0, double(w - 1));
      const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double lo = std::min({img(y0, x0), img(y0, x1), img(y1, x0), img(y1, x1)});
      const double hi = std::max({img(y0, x0), img(y0, x1), img(y1, x0), img(y1, x1)});
      EXPECT_GE(out(r, c), lo - 1e-12);
      EXPECT_LE(out(r, c), hi + 1e-12);
    }
  }
}

TEST(WarpTest, NanDisplacementPropagates) {
  const ImageD img = ImageD::Ones(4, 4);
  FieldD d = FieldD::zeros(4, 4);
  d.dx(1, 2) = std::numeric_limits<double>::quiet_NaN();
  const ImageD out = apply_deformation(img, d);
  EXPECT_TRUE(std::isnan(out(1, 2)));
  EXPECT_EQ(out(0, 0), 1.0);
}

TEST(WarpTest, ShapeMismatch) {
  EXPECT_THROW(apply_deformation<double>(ImageD::Zero(4, 4), FieldD::zeros(4, 5)), std::invalid_argument);
}

TEST(WarpTest, JacobianCheckHundredTrials) {
  std::mt19937_64 rng(4);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 6 + int(rng() % 5), w = 6 + int(rng() % 5);
    const ImageD img = smooth_image(h, w, rng);
    const FieldD d = off_grid_field(h, w, rng, 2);
    worst = std::max(worst, warp_jacobian_check(img, d, 1e-4));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(WarpTest, ConstantImageHasZeroFieldGradient) {
  std::mt19937_64 rng(5);
  const FieldD d = off_grid_field(6, 6, rng, 1);
  Graph<double> g;
  auto x = g.constant(image_tensor<double>(ImageD::Constant(6, 6, 2.5)));
  auto f = g.variable(field_tensor(d));
  g.backward(mean(warp(x, f)));
  EXPECT_EQ(g.grad(f).array().abs().maxCoeff(), 0.0);
  EXPECT_EQ(warp_jacobian_check<double>(ImageD::Constant(6, 6, 2.5), d, 1e-4), 0.0);
}

TEST(WarpTest, TapeGradientsForImageAndField) {
  std::mt19937_64 rng(6);
  const int h = 5, w = 5;
  Tensor<double> img = image_tensor(smooth_image(h, w, rng));
  Tensor<double> field = field_tensor(off_grid_field(h, w, rng, 1));
  const double err = ::advseg::testing::gradient_check(
      [](Graph<double>&, const std::vector<Var<double>>& v) { return warp(v[0], v[1]); }, {img, field},
      {true, true}, 1, 1e-5);
  EXPECT_LT(err, 1e-3);
}

}  // namespace
}  // namespace advseg
