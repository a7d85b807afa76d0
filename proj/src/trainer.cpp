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
#include "advseg/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "advseg/checkpoint.hpp"
#include "advseg/optim.hpp"

namespace advseg {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(rmsprop_decay >= 0 && rmsprop_decay < 1)) throw std::invalid_argument("rmsprop_decay must be in [0, 1)");
  if (!(rmsprop_eps > 0)) throw std::invalid_argument("rmsprop_eps must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (critic_steps_per_gen < 1) throw std::invalid_argument("critic_steps_per_gen must be >= 1");
  if (!(clip_value > 0)) throw std::invalid_argument("clip_value must be > 0");
  if (!(kl_weight >= 0)) throw std::invalid_argument("kl_weight must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  weights.validate();
}

std::string TrainLog::csv() const {
  std::ostringstream out;
  out << kHeader << "\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.step << "," << r.l_gen << "," << r.l_disc << "," << r.gen_adv << "," << r.target << "," << r.reg_d
        << "," << r.reg_v << "," << r.masked_xent << "\n";
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << csv();
  if (!out) throw DataError("write failed: " + path.string());
}

namespace {

using G = Graph<float>;
using V = Var<float>;

// Mean KL divergence of N(mu, exp(log_var)) from N(0, 1).
V kl_op(const V& mu, const V& log_var) {
  G& g = *mu.graph();
  const Index n = mu.value().size();
  const auto& m = mu.value().array();
  const auto& lv = log_var.value().array();
  const float value = float(-0.5 * (1.0f + lv - m.square() - lv.exp()).sum() / double(n));
  return g.record(Tensor<float>({1, 1, 1, 1}, value), {mu, log_var}, [&g, mu, log_var, n](const Tensor<float>& go) {
    const float s = go.data()[0] / float(n);
    if (g.needs_grad(mu)) g.grad_buffer(mu).array() += s * mu.value().array();
    if (g.needs_grad(log_var)) g.grad_buffer(log_var).array() += s * 0.5f * (log_var.value().array().exp() - 1.0f);
  });
}

class Trainer {
 public:
  Trainer(AttackerModel<float>& gen, CriticModel<float>& critic, const UNet<float>& seg,
          const std::vector<Image>& data, const TrainConfig& cfg)
      : gen_(gen),
        critic_(critic),
        seg_(seg),
        data_(data),
        cfg_(cfg),
        rng_(cfg.seed),
        gen_opt_(gen.parameters(), float(cfg.learning_rate), float(cfg.rmsprop_decay), float(cfg.rmsprop_eps)),
        critic_opt_(critic.parameters(), float(cfg.learning_rate), float(cfg.rmsprop_decay),
                    float(cfg.rmsprop_eps)) {}

  TrainLog run() {
    TrainLog log;
    for (int step = 1; step <= cfg_.total_steps; ++step) {
      double l_disc = 0;
      for (int k = 0; k < cfg_.critic_steps_per_gen; ++k) l_disc = critic_step(step);
      TrainLogRow row = generator_step(step);
      row.l_disc = l_disc;
      log.rows.push_back(row);
      if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0 && !cfg_.checkpoint_dir.empty()) {
        const auto dir = cfg_.checkpoint_dir / ("step_" + std::to_string(step));
        save_network(dir / "generator", gen_, "generator", {{"step", step}});
        save_network(dir / "critic", critic_, "critic", {{"step", step}});
      }
    }
    return log;
  }

 private:
  Tensor<float> draw_batch() {
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    const auto& first = data_.front();
    Tensor<float> batch({cfg_.batch_size, 1, int(first.rows()), int(first.cols())});
    for (int i = 0; i < cfg_.batch_size; ++i) batch.plane_map(i, 0) = data_[pick(rng_)];
    return batch;
  }

  Tensor<float> noise() { return standard_normal<float>(cfg_.batch_size, gen_.config().latent_dim, rng_); }

  void check_finite(double value, const char* what, int step) {
    if (std::isfinite(value)) return;
    std::filesystem::path dump;
    if (!cfg_.dump_dir.empty()) {
      dump = cfg_.dump_dir / ("collapse_step_" + std::to_string(step));
      save_network(dump / "generator", gen_, "generator", {{"step", step}});
      save_network(dump / "critic", critic_, "critic", {{"step", step}});
    }
    std::ostringstream msg;
    msg << "training collapsed at step " << step << ": " << what << " = " << value;
    if (!dump.empty()) msg << " (state dumped to " << dump.string() << ")";
    throw TrainingCollapse(msg.str(), dump);
  }

  double critic_step(int step) {
    const Tensor<float> real = draw_batch();
    const Tensor<float> nd = noise();
    const Tensor<float> nv = noise();
    Tensor<float> fake;
    {
      G g;
      const ForwardMode frozen{true, false, false};
      fake = gen_.generate(g, g.constant(real), nd, nv, frozen).attacked.value();
    }
    G g;
    const ForwardMode mode = ForwardMode::train();
    V score_real = mean(critic_.forward(g, g.constant(real), mode));
    V score_fake = mean(critic_.forward(g, g.constant(fake), mode));
    V loss = sub(score_fake, score_real);
    const double value = loss.value().data()[0];
    check_finite(value, "L_disc", step);
    critic_opt_.zero_grad();
    g.backward(loss);
    critic_opt_.step();
    critic_.clip(float(cfg_.clip_value));
    return value;
  }

  TrainLogRow generator_step(int step) {
    const LossWeights& w = cfg_.weights;
    const Tensor<float> real = draw_batch();
    const Tensor<float> nd = noise();
    const Tensor<float> nv = noise();

    G g;
    const V x = g.constant(real);
    const auto pass = gen_.generate(g, x, nd, nv, ForwardMode::train());
    const ForwardMode seg_mode = ForwardMode::eval();
    const V s0 = g.constant(seg_.forward(g, x, seg_mode).value());
    const V sdv = seg_.forward(g, pass.attacked, seg_mode);
    const V masked = masked_xent_op(sdv, s0);
    const V target = target_loss_op(masked, float(w.xi));
    const V reg_d = squared_norm_op(pass.field, float(w.lambda_d), w.norm_mode);
    const V reg_v = squared_norm_op(pass.bias, float(w.lambda_v), w.norm_mode);

    const ForwardMode critic_mode{true, false, false};
    const V score_real = mean(critic_.forward(g, x, critic_mode));
    const V score_fake = mean(critic_.forward(g, pass.attacked, critic_mode));
    const V gen_adv = sub(score_real, score_fake);
    V total = add(add(gen_adv, target), add(reg_d, reg_v));
    double kl = 0;
    if (cfg_.kl_weight > 0) {
      const V k = add(kl_op(pass.mu_d, pass.log_var_d), kl_op(pass.mu_v, pass.log_var_v));
      kl = k.value().data()[0];
      total = add(total, scale(k, float(cfg_.kl_weight)));
    }

    TrainLogRow row;
    row.step = step;
    row.gen_adv = gen_adv.value().data()[0];
    row.target = target.value().data()[0];
    row.reg_d = reg_d.value().data()[0];
    row.reg_v = reg_v.value().data()[0];
    row.masked_xent = masked.value().array().mean();
    row.kl = kl;
    row.l_gen = total.value().data()[0];
    row.mean_abs_d = pass.field.value().array().abs().mean();
    row.mean_abs_v = pass.bias.value().array().abs().mean();
    row.perceptibility = (pass.attacked.value().array() - real.array()).abs().mean();
    check_finite(row.l_gen, "L_gen", step);

    gen_opt_.zero_grad();
    g.backward(total);
    gen_opt_.step();
    return row;
  }

  AttackerModel<float>& gen_;
  CriticModel<float>& critic_;
  const UNet<float>& seg_;
  const std::vector<Image>& data_;
  const TrainConfig& cfg_;
  Rng rng_;
  RMSProp<float> gen_opt_;
  RMSProp<float> critic_opt_;
};

}  // namespace

AttackTrainResult train_attacker(AttackerModel<float> gen, CriticModel<float> critic, const UNet<float>& seg,
                                 const std::vector<Image>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (!seg.frozen()) throw std::logic_error("train_attacker: segmenter must be frozen");
  if (data.empty()) throw std::invalid_argument("train_attacker: empty training data");
  for (const auto& img : data) {
    if (img.rows() != gen.config().rows || img.cols() != gen.config().cols) {
      throw std::invalid_argument("train_attacker: image size does not match the attacker configuration");
    }
  }
  TrainLog log = Trainer(gen, critic, seg, data, cfg).run();
  return {std::move(gen), std::move(critic), std::move(log)};
}

}  // namespace advseg
