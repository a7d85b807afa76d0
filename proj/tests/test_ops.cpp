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
#include <random>

#include "advseg/ops.hpp"
#include "test_util.hpp"

namespace advseg {
namespace {

using ::advseg::testing::gradient_check;
using ::advseg::testing::random_tensor;
using V = std::vector<Var<double>>;

// Values kept away from the kinks of piecewise-linear ops.
Tensor<double> off_zero(const Shape& s, std::mt19937_64& rng) {
  Tensor<double> t = random_tensor(s, rng, 0.1, 1.0);
  for (Index i = 0; i < t.size(); ++i)
    if (rng() % 2) t.data()[i] = -t.data()[i];
  return t;
}

TEST(OpGradientTest, Conv2dStrideAndPadding) {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    const double err = gradient_check(
        [stride](Graph<double>&, const V& v) { return conv2d(v[0], v[1], v[2], stride, 1); },
        {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({1, 4, 1, 1}, rng)},
        {true, true, true});
    EXPECT_LT(err, 1e-3) << "stride " << stride;
  }
}

TEST(OpGradientTest, Conv2dWithoutBias) {
  std::mt19937_64 rng(2);
  const double err = gradient_check([](Graph<double>&, const V& v) { return conv2d(v[0], v[1], Var<double>{}, 1, 0); },
                                    {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 1, 1}, rng)},
                                    {true, true});
  EXPECT_LT(err, 1e-3);
}

TEST(OpForwardTest, Conv2dMatchesDirectSum) {
  std::mt19937_64 rng(3);
  const Tensor<double> x = random_tensor({1, 2, 5, 4}, rng);
  const Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> b = random_tensor({1, 3, 1, 1}, rng);
  Graph<double> g;
  const Tensor<double> y = conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 2}));
  for (int o = 0; o < 3; ++o) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 2; ++c) {
        double s = b.data()[o];
        for (int i = 0; i < 2; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = 2 * r - 1 + ky, xx = 2 * c - 1 + kx;
              if (yy >= 0 && yy < 5 && xx >= 0 && xx < 4) s += w(o, i, ky, kx) * x(0, i, yy, xx);
            }
        EXPECT_NEAR(y(0, o, r, c), s, 1e-12);
      }
    }
  }
}

TEST(OpGradientTest, BatchNormTraining) {
  std::mt19937_64 rng(4);
  NormStats<double> stats{Tensor<double>({1, 3, 1, 1}), Tensor<double>({1, 3, 1, 1}, 1.0)};
  const double err = gradient_check(
      [&stats](Graph<double>&, const V& v) {
        return batch_norm(v[0], v[1], v[2], stats, ForwardMode{true, false, true});
      },
      {random_tensor({2, 3, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng), random_tensor({1, 3, 1, 1}, rng)},
      {true, true, true});
  EXPECT_LT(err, 1e-3);
}

TEST(OpGradientTest, BatchNormInference) {
  std::mt19937_64 rng(5);
  NormStats<double> stats{random_tensor({1, 2, 1, 1}, rng), random_tensor({1, 2, 1, 1}, rng, 0.5, 2.0)};
  const double err = gradient_check(
      [&stats](Graph<double>&, const V& v) { return batch_norm(v[0], v[1], v[2], stats, ForwardMode::eval()); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({1, 2, 1, 1}, rng), random_tensor({1, 2, 1, 1}, rng)},
      {true, true, true});
  EXPECT_LT(err, 1e-3);
}

TEST(OpForwardTest, BatchNormUpdatesStatistics) {
  Tensor<double> x({2, 1, 1, 2});
  x.array() << 1, 3, 5, 7;
  NormStats<double> stats{Tensor<double>({1, 1, 1, 1}), Tensor<double>({1, 1, 1, 1}, 1.0)};
  Graph<double> g;
  auto y = batch_norm(g.constant(x), g.constant(Tensor<double>({1, 1, 1, 1}, 1.0)),
                      g.constant(Tensor<double>({1, 1, 1, 1})), stats, ForwardMode::train(), 0.1, 0.0);
  EXPECT_NEAR(y.value().array().mean(), 0.0, 1e-12);
  EXPECT_NEAR(y.value().array().square().mean(), 1.0, 1e-12);
  EXPECT_NEAR(stats.mean.data()[0], 0.1 * 4.0, 1e-12);
  EXPECT_GT(stats.var.data()[0], 1.0);
}

TEST(OpGradientTest, Elementwise) {
  std::mt19937_64 rng(6);
  const Shape s{2, 3, 4, 4};
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return leaky_relu(v[0], 0.2); }, {off_zero(s, rng)},
                           {true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return scaled_tanh(v[0], 8.0); },
                           {random_tensor(s, rng, -2, 2)}, {true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return add(v[0], scale(v[1], -1.5)); },
                           {random_tensor(s, rng), random_tensor(s, rng)}, {true, true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return sub(v[0], v[1]); },
                           {random_tensor(s, rng), random_tensor(s, rng)}, {true, true}),
            1e-3);
}

TEST(OpGradientTest, PoolingAndResampling) {
  std::mt19937_64 rng(7);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return max_pool2(v[0]); },
                           {random_tensor({2, 2, 4, 4}, rng)}, {true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return upsample2(v[0]); },
                           {random_tensor({2, 2, 3, 3}, rng)}, {true}),
            1e-3);
}

TEST(OpGradientTest, ChannelOps) {
  std::mt19937_64 rng(8);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return concat_channels(v[0], v[1]); },
                           {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}, {true, true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return slice_channels(v[0], 1, 2); },
                           {random_tensor({2, 4, 3, 3}, rng)}, {true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return softmax_channels(v[0]); },
                           {random_tensor({2, 5, 4, 4}, rng, -3, 3)}, {true}),
            1e-3);
}

TEST(OpGradientTest, LinearAndReshape) {
  std::mt19937_64 rng(9);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return linear(v[0], v[1], v[2]); },
                           {random_tensor({3, 2, 2, 2}, rng), random_tensor({5, 8, 1, 1}, rng),
                            random_tensor({1, 5, 1, 1}, rng)},
                           {true, true, true}),
            1e-3);
  EXPECT_LT(gradient_check([](Graph<double>&, const V& v) { return mean(reshape(v[0], Shape{2, 4, 2, 1})); },
                           {random_tensor({2, 1, 2, 4}, rng)}, {true}),
            1e-3);
}

TEST(OpForwardTest, SoftmaxIsSimplex) {
  std::mt19937_64 rng(10);
  Graph<double> g;
  const Tensor<double> y = softmax_channels(g.constant(random_tensor({2, 5, 3, 3}, rng, -50, 50))).value();
  for (int n = 0; n < 2; ++n) {
    for (Index i = 0; i < 9; ++i) {
      double s = 0;
      for (int c = 0; c < 5; ++c) {
        EXPECT_GE(y.plane(n, c)[i], 0.0);
        s += y.plane(n, c)[i];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(OpForwardTest, MaxPoolTiesPickFirst) {
  Graph<double> g;
  auto x = g.variable(Tensor<double>({1, 1, 2, 2}, 1.0));
  auto y = max_pool2(x);
  g.backward(y);
  const Tensor<double> gx = g.grad(x);
  EXPECT_EQ(gx.data()[0], 1.0);
  EXPECT_EQ(gx.array().sum(), 1.0);
}

TEST(GraphTest, ConstantsReceiveNoGradient) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({1, 1, 2, 2}, 2.0));
  auto b = g.variable(Tensor<double>({1, 1, 2, 2}, 3.0));
  g.backward(mean(add(a, b)));
  EXPECT_FALSE(g.needs_grad(a));
  EXPECT_EQ(g.grad(a).array().abs().sum(), 0.0);
  EXPECT_NEAR(g.grad(b).data()[0], 0.25, 1e-15);
}

TEST(GraphTest, ParameterAccumulates) {
  Parameter<double> p("w", Tensor<double>({1, 1, 1, 2}, 1.0));
  for (int rep = 0; rep < 2; ++rep) {
    Graph<double> g;
    g.backward(mean(scale(g.parameter(p, true), 4.0)));
  }
  EXPECT_NEAR(p.grad.data()[0], 4.0, 1e-15);
  p.zero_grad();
  Graph<double> g;
  g.backward(mean(g.parameter(p, false)));
  EXPECT_EQ(p.grad.array().abs().sum(), 0.0);
}

TEST(GraphTest, ShapeErrors) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({1, 1, 2, 2}));
  auto b = g.constant(Tensor<double>({1, 1, 2, 3}));
  EXPECT_THROW(add(a, b), std::invalid_argument);
  EXPECT_THROW(reshape(a, Shape{1, 1, 1, 3}), std::invalid_argument);
}

}  // namespace
}  // namespace advseg
