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
#ifndef ADVSEG_OPTIM_HPP_
#define ADVSEG_OPTIM_HPP_

#include <cmath>
#include <stdexcept>
#include <vector>

#include "advseg/autograd.hpp"

namespace advseg {

/// One RMSProp update, in place:
///   state <- decay * state + (1 - decay) * grad^2
///   param <- param - lr * grad / sqrt(state + eps)
template <typename DerivedP, typename DerivedG, typename DerivedS, typename Scalar>
void rmsprop_step(Eigen::ArrayBase<DerivedP>& params, const Eigen::ArrayBase<DerivedG>& grads,
                  Eigen::ArrayBase<DerivedS>& state, Scalar lr, Scalar decay, Scalar eps) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw std::invalid_argument("rmsprop_step: shape mismatch");
  }
  state.derived() = decay * state.derived() + (Scalar(1) - decay) * grads.derived().square();
  params.derived() -= lr * grads.derived() / (state.derived() + eps).sqrt();
}

template <typename Scalar>
class RMSProp {
 public:
  RMSProp(std::vector<Parameter<Scalar>*> params, Scalar lr, Scalar decay, Scalar eps)
      : params_(std::move(params)), lr_(lr), decay_(decay), eps_(eps) {
    if (!(lr > 0)) throw std::invalid_argument("RMSProp: learning rate must be positive");
    for (auto* p : params_) state_.push_back(Tensor<Scalar>(p->value.shape()));
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      rmsprop_step(params_[i]->value.array(), params_[i]->grad.array(), state_[i].array(), lr_, decay_, eps_);
    }
  }
  void zero_grad() {
    for (auto* p : params_) p->grad.set_zero();
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Tensor<Scalar>> state_;
  Scalar lr_, decay_, eps_;
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Parameter<Scalar>*> params, Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999),
       Scalar eps = Scalar(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
    for (auto* p : params_) {
      m_.push_back(Tensor<Scalar>(p->value.shape()));
      v_.push_back(Tensor<Scalar>(p->value.shape()));
    }
  }

  void step() {
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad.array();
      m_[i].array() = beta1_ * m_[i].array() + (1 - beta1_) * g;
      v_[i].array() = beta2_ * v_[i].array() + (1 - beta2_) * g.square();
      params_[i]->value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }
  void zero_grad() {
    for (auto* p : params_) p->grad.set_zero();
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Tensor<Scalar>> m_, v_;
  Scalar lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace advseg

#endif  // ADVSEG_OPTIM_HPP_
