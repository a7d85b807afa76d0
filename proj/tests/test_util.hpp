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
#ifndef ADVSEG_TESTS_TEST_UTIL_HPP_
#define ADVSEG_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "advseg/autograd.hpp"
#include "advseg/tensor.hpp"

namespace advseg::testing {

using Builder = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

/// Random probability simplex along channels (entries bounded away from 0).
inline Tensor<double> random_simplex(const Shape& s, std::mt19937_64& rng) {
  Tensor<double> t = random_tensor(s, rng, 0.05, 1.0);
  for (int n = 0; n < s.n; ++n) {
    for (Index i = 0; i < s.plane(); ++i) {
      double sum = 0;
      for (int c = 0; c < s.c; ++c) sum += t.plane(n, c)[i];
      for (int c = 0; c < s.c; ++c) t.plane(n, c)[i] /= sum;
    }
  }
  return t;
}

/// sum(weights .* y) recorded on the tape.
inline Var<double> probe(const Var<double>& y, const Tensor<double>& weights) {
  Graph<double>& g = *y.graph();
  const double value = (y.value().array() * weights.array()).sum();
  return g.record(Tensor<double>({1, 1, 1, 1}, value), {y}, [&g, y, weights](const Tensor<double>& go) {
    g.grad_buffer(y).array() += weights.array() * go.data()[0];
  });
}

/// Largest elementwise relative error |a - f| / max(|a|, |f|, floor) between
/// the tape gradient of sum(w .* build(inputs)) and central differences,
/// over every input marked in `check`.
inline double gradient_check(const Builder& build, std::vector<Tensor<double>> inputs, std::vector<bool> check,
                             std::uint64_t seed = 7, double eps = 1e-6, double floor = 1e-6) {
  std::mt19937_64 rng(seed);
  Tensor<double> weights;
  auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (std::size_t k = 0; k < xs.size(); ++k) vars.push_back(check[k] ? g.variable(xs[k]) : g.constant(xs[k]));
    Var<double> y = build(g, vars);
    if (weights.empty()) weights = random_tensor(y.shape(), rng);
    Var<double> loss = probe(y, weights);
    if (grads != nullptr) {
      g.backward(loss);
      for (std::size_t k = 0; k < xs.size(); ++k) grads->push_back(g.grad(vars[k]));
    }
    return loss.value().data()[0];
  };
  std::vector<Tensor<double>> analytic;
  evaluate(inputs, &analytic);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!check[k]) continue;
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      inputs[k].data()[i] = x0 + eps;
      const double up = evaluate(inputs, nullptr);
      inputs[k].data()[i] = x0 - eps;
      const double down = evaluate(inputs, nullptr);
      inputs[k].data()[i] = x0;
      const double fd = (up - down) / (2 * eps);
      const double a = analytic[k].data()[i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("advseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace advseg::testing

#endif  // ADVSEG_TESTS_TEST_UTIL_HPP_
