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
#ifndef ADVSEG_LAYERS_HPP_
#define ADVSEG_LAYERS_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "advseg/ops.hpp"

namespace advseg {

using Rng = std::mt19937_64;

/// Fills t with N(0, stddev^2) draws.
template <typename Scalar>
void fill_normal(Tensor<Scalar>& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(dist(rng));
}

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  /// He-normal initialization scaled by `gain`; gain 0 gives an all-zero layer.
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad, bool bias, Rng& rng,
         double gain = 1.0, double slope = 0.0)
      : weight_(name + ".weight", Tensor<Scalar>({out, in, kernel, kernel})),
        stride_(stride),
        pad_(pad),
        has_bias_(bias) {
    const double fan_in = double(in) * kernel * kernel;
    fill_normal(weight_.value, rng, gain * std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in)));
    if (bias) bias_ = Parameter<Scalar>(name + ".bias", Tensor<Scalar>({1, out, 1, 1}));
  }

  Var<Scalar> operator()(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    Var<Scalar> b = has_bias_ ? g.parameter(bias_, mode.param_grads) : Var<Scalar>{};
    return conv2d(x, g.parameter(weight_, mode.param_grads), b, stride_, pad_);
  }

  template <class F>
  void visit(F&& f) {
    f(weight_);
    if (has_bias_) f(bias_);
  }
  template <class F>
  void visit(F&& f) const {
    f(weight_);
    if (has_bias_) f(bias_);
  }

  int out_channels() const { return weight_.value.n(); }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  int stride_ = 1;
  int pad_ = 0;
  bool has_bias_ = false;
};

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, double gain = 1.0)
      : weight_(name + ".weight", Tensor<Scalar>({out, in, 1, 1})),
        bias_(name + ".bias", Tensor<Scalar>({1, out, 1, 1})) {
    fill_normal(weight_.value, rng, gain * std::sqrt(1.0 / in));
  }

  Var<Scalar> operator()(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    return linear(x, g.parameter(weight_, mode.param_grads), g.parameter(bias_, mode.param_grads));
  }

  template <class F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }
  template <class F>
  void visit(F&& f) const {
    f(weight_);
    f(bias_);
  }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels)
      : name_(name),
        gamma_(name + ".gamma", Tensor<Scalar>({1, channels, 1, 1}, Scalar(1))),
        beta_(name + ".beta", Tensor<Scalar>({1, channels, 1, 1})),
        stats_{Tensor<Scalar>({1, channels, 1, 1}), Tensor<Scalar>({1, channels, 1, 1}, Scalar(1))} {}

  /// Running statistics are only written when mode.update_stats is set.
  Var<Scalar> operator()(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    return batch_norm(x, g.parameter(gamma_, mode.param_grads), g.parameter(beta_, mode.param_grads), stats_,
                      mode);
  }

  template <class F>
  void visit(F&& f) {
    f(gamma_);
    f(beta_);
  }
  template <class F>
  void visit(F&& f) const {
    f(gamma_);
    f(beta_);
  }
  template <class F>
  void visit_buffers(F&& f) {
    f(name_ + ".running_mean", stats_.mean);
    f(name_ + ".running_var", stats_.var);
  }
  template <class F>
  void visit_buffers(F&& f) const {
    f(name_ + ".running_mean", static_cast<const Tensor<Scalar>&>(stats_.mean));
    f(name_ + ".running_var", static_cast<const Tensor<Scalar>&>(stats_.var));
  }

 private:
  std::string name_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  mutable NormStats<Scalar> stats_;
};

/// Convolution followed by batch normalization and a (leaky) rectifier.
template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in, int out, int stride, double slope, Rng& rng)
      : conv_(name + ".conv", in, out, 3, stride, 1, false, rng, 1.0, slope), norm_(name + ".bn", out), slope_(slope) {}

  Var<Scalar> operator()(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    return leaky_relu(norm_(g, conv_(g, x, mode), mode), Scalar(slope_));
  }

  template <class F>
  void visit(F&& f) {
    conv_.visit(f);
    norm_.visit(f);
  }
  template <class F>
  void visit(F&& f) const {
    conv_.visit(f);
    norm_.visit(f);
  }
  template <class F>
  void visit_buffers(F&& f) {
    norm_.visit_buffers(f);
  }
  template <class F>
  void visit_buffers(F&& f) const {
    norm_.visit_buffers(f);
  }

 private:
  Conv2d<Scalar> conv_;
  BatchNorm2d<Scalar> norm_;
  double slope_ = 0.0;
};

/// FNV-1a over the raw bytes of every visited tensor, in visit order.
class StateHasher {
 public:
  template <typename Scalar>
  void add(const Tensor<Scalar>& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    const std::size_t n = std::size_t(t.size()) * sizeof(Scalar);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 1099511628211ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
};

/// Parameter and buffer bookkeeping shared by every network. `Derived` provides
/// visit(F) and visit_buffers(F) in const and non-const flavours.
template <typename Derived, typename Scalar>
class NetworkBase {
 public:
  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    self().visit([&](Parameter<Scalar>& p) { out.push_back(&p); });
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    self().visit([&](const Parameter<Scalar>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    self().visit([](Parameter<Scalar>& p) { p.grad.set_zero(); });
  }

  /// Hash of all parameters and running statistics.
  std::uint64_t state_hash() const {
    StateHasher h;
    self().visit([&](const Parameter<Scalar>& p) { h.add(p.value); });
    self().visit_buffers([&](const std::string&, const Tensor<Scalar>& t) { h.add(t); });
    return h.value();
  }

 private:
  Derived& self() { return static_cast<Derived&>(*this); }
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

}  // namespace advseg

#endif  // ADVSEG_LAYERS_HPP_
