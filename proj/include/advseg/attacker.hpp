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
#ifndef ADVSEG_ATTACKER_HPP_
#define ADVSEG_ATTACKER_HPP_

// Attack generator and Wasserstein critic.
//
// The generator encodes the clean image with a strided convolutional trunk,
// maps the flattened features to two Gaussian posteriors (deformation and
// intensity), and decodes a sample of each with its own decoder. Both decoders
// share one architecture (linear projection to a coarse grid, then
// upsample/conv blocks) but hold separate weights. Outputs pass through a
// scaled tanh, bounding displacements by d_max pixels and the intensity
// perturbation by v_max. The attacked image is warp(I0, D) + V.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advseg/layers.hpp"
#include "advseg/warp.hpp"

namespace advseg {

inline constexpr double kLeakySlope = 0.2;

struct AttackerConfig {
  int rows = 64;
  int cols = 64;
  int latent_dim = 64;
  int base_channels = 16;
  double d_max = 8.0;
  double v_max = 0.3;
  /// Initial scale of the last decoder layers; 0 makes D = 0 and V = 0 exactly.
  double output_gain = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (rows < 16 || cols < 16 || rows % 8 != 0 || cols % 8 != 0) {
      throw std::invalid_argument("attacker: image size must be a multiple of 8 and at least 16");
    }
    if (latent_dim < 1 || base_channels < 1) throw std::invalid_argument("attacker: invalid latent_dim/base_channels");
    if (!(d_max > 0) || !(v_max > 0)) throw std::invalid_argument("attacker: d_max and v_max must be positive");
    if (!(output_gain >= 0)) throw std::invalid_argument("attacker: output_gain must be >= 0");
  }
};

/// Gaussian posterior parameters and one reparameterized draw.
template <typename Scalar>
struct LatentCodeT {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mu;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> log_var;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> sample;

  Index size() const { return sample.size(); }
};
using LatentCode = LatentCodeT<float>;

/// Draws z = mu + exp(log_var / 2) * noise.
template <typename Scalar>
LatentCodeT<Scalar> make_latent(Eigen::Array<Scalar, Eigen::Dynamic, 1> mu,
                                Eigen::Array<Scalar, Eigen::Dynamic, 1> log_var,
                                const Eigen::Array<Scalar, Eigen::Dynamic, 1>& noise) {
  if (mu.size() != log_var.size() || mu.size() != noise.size()) throw std::invalid_argument("latent: size mismatch");
  LatentCodeT<Scalar> z{std::move(mu), std::move(log_var), {}};
  z.sample = z.mu + (z.log_var * Scalar(0.5)).exp() * noise;
  return z;
}

template <typename Scalar>
class FieldDecoder {
 public:
  FieldDecoder() = default;
  FieldDecoder(const std::string& name, const AttackerConfig& cfg, int out_channels, double bound, Rng& rng)
      : rows0_(cfg.rows / 8), cols0_(cfg.cols / 8), ch0_(4 * cfg.base_channels), bound_(bound) {
    const int c = cfg.base_channels;
    fc_ = Linear<Scalar>(name + ".fc", cfg.latent_dim, ch0_ * rows0_ * cols0_, rng);
    blocks_.emplace_back(name + ".up0", ch0_, 2 * c, 1, kLeakySlope, rng);
    blocks_.emplace_back(name + ".up1", 2 * c, c, 1, kLeakySlope, rng);
    blocks_.emplace_back(name + ".up2", c, c, 1, kLeakySlope, rng);
    out_ = Conv2d<Scalar>(name + ".out", c, out_channels, 3, 1, 1, true, rng, cfg.output_gain, kLeakySlope);
  }

  /// z: N x L x 1 x 1 -> N x out_channels x rows x cols, bounded by +-bound.
  Var<Scalar> operator()(Graph<Scalar>& g, const Var<Scalar>& z, const ForwardMode& mode) const {
    Var<Scalar> h = leaky_relu(fc_(g, z, mode), Scalar(kLeakySlope));
    h = reshape(h, Shape{z.shape().n, ch0_, rows0_, cols0_});
    for (const auto& b : blocks_) h = b(g, upsample2(h), mode);
    return scaled_tanh(out_(g, h, mode), Scalar(bound_));
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
    for (auto& b : blocks_) b.visit_buffers(f);
  }
  template <class F>
  void visit_buffers(F&& f) const {
    for (const auto& b : blocks_) b.visit_buffers(f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    self.fc_.visit(f);
    for (auto& b : self.blocks_) b.visit(f);
    self.out_.visit(f);
  }

  int rows0_ = 0, cols0_ = 0, ch0_ = 0;
  double bound_ = 1.0;
  Linear<Scalar> fc_;
  std::vector<ConvBlock<Scalar>> blocks_;
  Conv2d<Scalar> out_;
};

/// Tape outputs of one generator pass.
template <typename Scalar>
struct GeneratorPass {
  Var<Scalar> mu_d, log_var_d, mu_v, log_var_v;
  Var<Scalar> z_d, z_v;
  Var<Scalar> field;     ///< N x 2 x H x W (dx, dy)
  Var<Scalar> bias;      ///< N x 1 x H x W
  Var<Scalar> warped;    ///< warp(I0, D)
  Var<Scalar> attacked;  ///< warp(I0, D) + V
};

template <typename Scalar>
class AttackerModel : public NetworkBase<AttackerModel<Scalar>, Scalar> {
 public:
  AttackerModel() = default;
  explicit AttackerModel(const AttackerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int c = cfg.base_channels;
    trunk_.emplace_back("enc0", 1, c, 1, kLeakySlope, rng);
    trunk_.emplace_back("enc1", c, 2 * c, 2, kLeakySlope, rng);
    trunk_.emplace_back("enc2", 2 * c, 4 * c, 2, kLeakySlope, rng);
    trunk_.emplace_back("enc3", 4 * c, 4 * c, 2, kLeakySlope, rng);
    const int features = 4 * c * (cfg.rows / 8) * (cfg.cols / 8);
    mu_d_ = Linear<Scalar>("head_d.mu", features, cfg.latent_dim, rng);
    log_var_d_ = Linear<Scalar>("head_d.log_var", features, cfg.latent_dim, rng, 0.1);
    mu_v_ = Linear<Scalar>("head_v.mu", features, cfg.latent_dim, rng);
    log_var_v_ = Linear<Scalar>("head_v.log_var", features, cfg.latent_dim, rng, 0.1);
    decoder_d_ = FieldDecoder<Scalar>("decoder_d", cfg, 2, cfg.d_max, rng);
    decoder_v_ = FieldDecoder<Scalar>("decoder_v", cfg, 1, cfg.v_max, rng);
  }

  const AttackerConfig& config() const { return cfg_; }
  const FieldDecoder<Scalar>& decoder_d() const { return decoder_d_; }
  const FieldDecoder<Scalar>& decoder_v() const { return decoder_v_; }

  void check_input(const Shape& s) const {
    if (s.c != 1 || s.h != cfg_.rows || s.w != cfg_.cols) {
      throw std::invalid_argument("attacker: expected N x 1 x " + std::to_string(cfg_.rows) + " x " +
                                  std::to_string(cfg_.cols) + " input, got " + s.str());
    }
  }
  void check_latent(const Shape& s) const {
    if (s.sample() != cfg_.latent_dim) {
      throw std::invalid_argument("attacker: wrong latent length " + std::to_string(s.sample()) + " (expected " +
                                  std::to_string(cfg_.latent_dim) + ")");
    }
  }

  struct Posterior {
    Var<Scalar> mu_d, log_var_d, mu_v, log_var_v;
  };

  Posterior encode(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    check_input(x.shape());
    Var<Scalar> h = x;
    for (const auto& b : trunk_) h = b(g, h, mode);
    return {mu_d_(g, h, mode), log_var_d_(g, h, mode), mu_v_(g, h, mode), log_var_v_(g, h, mode)};
  }

  Var<Scalar> decode_deformation(Graph<Scalar>& g, const Var<Scalar>& z, const ForwardMode& mode) const {
    check_latent(z.shape());
    return decoder_d_(g, z, mode);
  }
  Var<Scalar> decode_intensity(Graph<Scalar>& g, const Var<Scalar>& z, const ForwardMode& mode) const {
    check_latent(z.shape());
    return decoder_v_(g, z, mode);
  }

  /// Full generator pass. noise_d / noise_v are N x L x 1 x 1 standard-normal
  /// draws. With `prior`, the posterior is ignored and z = noise.
  GeneratorPass<Scalar> generate(Graph<Scalar>& g, const Var<Scalar>& x, const Tensor<Scalar>& noise_d,
                                 const Tensor<Scalar>& noise_v, const ForwardMode& mode, bool prior = false) const {
    GeneratorPass<Scalar> out;
    if (prior) {
      out.z_d = g.constant(noise_d);
      out.z_v = g.constant(noise_v);
    } else {
      const Posterior p = encode(g, x, mode);
      out.mu_d = p.mu_d;
      out.log_var_d = p.log_var_d;
      out.mu_v = p.mu_v;
      out.log_var_v = p.log_var_v;
      out.z_d = reparameterize(p.mu_d, p.log_var_d, noise_d);
      out.z_v = reparameterize(p.mu_v, p.log_var_v, noise_v);
    }
    out.field = decode_deformation(g, out.z_d, mode);
    out.bias = decode_intensity(g, out.z_v, mode);
    out.warped = warp(x, out.field);
    out.attacked = add(out.warped, out.bias);
    return out;
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
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    for (auto& b : self.trunk_) b.visit(f);
    self.mu_d_.visit(f);
    self.log_var_d_.visit(f);
    self.mu_v_.visit(f);
    self.log_var_v_.visit(f);
    self.decoder_d_.visit(f);
    self.decoder_v_.visit(f);
  }
  template <class Self, class F>
  static void buffers_impl(Self& self, F& f) {
    for (auto& b : self.trunk_) b.visit_buffers(f);
    self.decoder_d_.visit_buffers(f);
    self.decoder_v_.visit_buffers(f);
  }

  AttackerConfig cfg_;
  std::vector<ConvBlock<Scalar>> trunk_;
  Linear<Scalar> mu_d_, log_var_d_, mu_v_, log_var_v_;
  FieldDecoder<Scalar> decoder_d_, decoder_v_;
};

struct CriticConfig {
  int rows = 64;
  int cols = 64;
  int base_channels = 16;
  std::uint64_t seed = 0;
};

/// Strided convolutional critic with a linear scalar head and no output nonlinearity.
template <typename Scalar>
class CriticModel : public NetworkBase<CriticModel<Scalar>, Scalar> {
 public:
  CriticModel() = default;
  explicit CriticModel(const CriticConfig& cfg) : cfg_(cfg) {
    if (cfg.rows % 16 != 0 || cfg.cols % 16 != 0 || cfg.rows < 16 || cfg.cols < 16) {
      throw std::invalid_argument("critic: image size must be a multiple of 16");
    }
    Rng rng(cfg.seed);
    const int c = cfg.base_channels;
    stem_ = Conv2d<Scalar>("critic.stem", 1, c, 3, 2, 1, true, rng, 1.0, kLeakySlope);
    blocks_.emplace_back("critic.b1", c, 2 * c, 2, kLeakySlope, rng);
    blocks_.emplace_back("critic.b2", 2 * c, 4 * c, 2, kLeakySlope, rng);
    blocks_.emplace_back("critic.b3", 4 * c, 4 * c, 2, kLeakySlope, rng);
    head_ = Linear<Scalar>("critic.head", 4 * c * (cfg.rows / 16) * (cfg.cols / 16), 1, rng);
  }

  const CriticConfig& config() const { return cfg_; }

  /// N x 1 x H x W -> N x 1 x 1 x 1 scores.
  Var<Scalar> forward(Graph<Scalar>& g, const Var<Scalar>& x, const ForwardMode& mode) const {
    const Shape s = x.shape();
    if (s.c != 1 || s.h != cfg_.rows || s.w != cfg_.cols) {
      throw std::invalid_argument("critic: expected N x 1 x " + std::to_string(cfg_.rows) + " x " +
                                  std::to_string(cfg_.cols) + " input, got " + s.str());
    }
    Var<Scalar> h = leaky_relu(stem_(g, x, mode), Scalar(kLeakySlope));
    for (const auto& b : blocks_) h = b(g, h, mode);
    return head_(g, h, mode);
  }

  /// Clamps every parameter into [-c, c].
  void clip(Scalar c) {
    if (!(c > 0)) throw std::invalid_argument("clip_critic: bound must be positive");
    this->visit([c](Parameter<Scalar>& p) { p.value.array() = p.value.array().max(-c).min(c); });
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
    for (auto& b : blocks_) b.visit_buffers(f);
  }
  template <class F>
  void visit_buffers(F&& f) const {
    for (const auto& b : blocks_) b.visit_buffers(f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    self.stem_.visit(f);
    for (auto& b : self.blocks_) b.visit(f);
    self.head_.visit(f);
  }

  CriticConfig cfg_;
  Conv2d<Scalar> stem_;
  std::vector<ConvBlock<Scalar>> blocks_;
  Linear<Scalar> head_;
};

template <typename Scalar>
CriticModel<Scalar> clip_critic(CriticModel<Scalar> critic, Scalar c) {
  critic.clip(c);
  return critic;
}

// Inference-mode convenience API on single images.

template <typename Scalar>
Tensor<Scalar> standard_normal(int n, int length, Rng& rng) {
  Tensor<Scalar> t({n, length, 1, 1});
  fill_normal(t, rng, 1.0);
  return t;
}

template <typename Scalar>
struct AttackSampleT {
  DeformationFieldT<Scalar> field;
  ImageT<Scalar> bias;
  ImageT<Scalar> attacked;
};
using AttackSample = AttackSampleT<float>;

/// Posterior codes (deformation, intensity) for one image; draws use `rng`.
template <typename Scalar>
std::pair<LatentCodeT<Scalar>, LatentCodeT<Scalar>> encode(const AttackerModel<Scalar>& model,
                                                           const ImageT<Scalar>& img, Rng& rng) {
  Graph<Scalar> g;
  const auto p = model.encode(g, g.constant(image_tensor(img)), ForwardMode::eval());
  const int l = model.config().latent_dim;
  const Tensor<Scalar> nd = standard_normal<Scalar>(1, l, rng);
  const Tensor<Scalar> nv = standard_normal<Scalar>(1, l, rng);
  return {make_latent<Scalar>(p.mu_d.value().array(), p.log_var_d.value().array(), nd.array()),
          make_latent<Scalar>(p.mu_v.value().array(), p.log_var_v.value().array(), nv.array())};
}

template <typename Scalar>
DeformationFieldT<Scalar> decode_deformation(const AttackerModel<Scalar>& model, const LatentCodeT<Scalar>& z) {
  if (z.size() != model.config().latent_dim) throw std::invalid_argument("decode_deformation: wrong latent length");
  Graph<Scalar> g;
  Tensor<Scalar> zt({1, int(z.size()), 1, 1});
  zt.array() = z.sample;
  return field_from_tensor(model.decode_deformation(g, g.constant(zt), ForwardMode::eval()).value(), 0);
}

template <typename Scalar>
ImageT<Scalar> decode_intensity(const AttackerModel<Scalar>& model, const LatentCodeT<Scalar>& z) {
  if (z.size() != model.config().latent_dim) throw std::invalid_argument("decode_intensity: wrong latent length");
  Graph<Scalar> g;
  Tensor<Scalar> zt({1, int(z.size()), 1, 1});
  zt.array() = z.sample;
  return plane_image(model.decode_intensity(g, g.constant(zt), ForwardMode::eval()).value(), 0, 0);
}

/// One attack on `img`: noise for D then V is drawn from `rng`.
template <typename Scalar>
AttackSampleT<Scalar> generate(const AttackerModel<Scalar>& model, const ImageT<Scalar>& img, Rng& rng,
                               bool prior = false) {
  const int l = model.config().latent_dim;
  const Tensor<Scalar> nd = standard_normal<Scalar>(1, l, rng);
  const Tensor<Scalar> nv = standard_normal<Scalar>(1, l, rng);
  Graph<Scalar> g;
  const auto pass = model.generate(g, g.constant(image_tensor(img)), nd, nv, ForwardMode::eval(), prior);
  return {field_from_tensor(pass.field.value(), 0), plane_image(pass.bias.value(), 0, 0),
          plane_image(pass.attacked.value(), 0, 0)};
}

/// n attacks on `img` drawn from a generator seeded with `seed`.
template <typename Scalar>
std::vector<AttackSampleT<Scalar>> sample_attacks(const AttackerModel<Scalar>& model, const ImageT<Scalar>& img, int n,
                                                  std::uint64_t seed, bool prior = false) {
  if (n < 1) throw std::invalid_argument("sample_attacks: n must be >= 1");
  Rng rng(seed);
  std::vector<AttackSampleT<Scalar>> out;
  for (int i = 0; i < n; ++i) out.push_back(generate(model, img, rng, prior));
  return out;
}

template <typename Scalar>
Scalar critic_score(const CriticModel<Scalar>& critic, const ImageT<Scalar>& img) {
  Graph<Scalar> g;
  return critic.forward(g, g.constant(image_tensor(img)), ForwardMode::eval()).value().data()[0];
}

template <typename Scalar>
std::vector<Scalar> critic_scores(const CriticModel<Scalar>& critic, std::span<const ImageT<Scalar>> imgs) {
  Graph<Scalar> g;
  const Tensor<Scalar>& s = critic.forward(g, g.constant(stack_images(imgs)), ForwardMode::eval()).value();
  return std::vector<Scalar>(s.data(), s.data() + s.size());
}

}  // namespace advseg

#endif  // ADVSEG_ATTACKER_HPP_
