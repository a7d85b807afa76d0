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
#ifndef ADVSEG_TRAINER_HPP_
#define ADVSEG_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "advseg/attacker.hpp"
#include "advseg/losses.hpp"
#include "advseg/segmenter.hpp"

namespace advseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-10;
  int batch_size = 8;
  int total_steps = 1000;  ///< generator updates
  int critic_steps_per_gen = 5;
  double clip_value = 0.01;
  std::uint64_t seed = 0;
  LossWeights weights;
  double kl_weight = 0.0;
  /// Save generator and critic every K generator steps (0 disables).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Where to write models and the partial log if a loss turns non-finite.
  std::filesystem::path dump_dir;

  void validate() const;
};

/// Loss components of one generator step (batch means).
struct TrainLogRow {
  int step = 0;
  double l_gen = 0;
  double l_disc = 0;
  double gen_adv = 0;
  double target = 0;
  double reg_d = 0;
  double reg_v = 0;
  double masked_xent = 0;
  double kl = 0;
  double mean_abs_d = 0;
  double mean_abs_v = 0;
  double perceptibility = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  static constexpr const char* kHeader = "step,L_gen,L_disc,gen_adv,target,reg_D,reg_V,masked_xent";

  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Raised when any loss becomes non-finite. dump_path names the state dump, if one was written.
class TrainingCollapse : public std::runtime_error {
 public:
  TrainingCollapse(const std::string& what, std::filesystem::path dump)
      : std::runtime_error(what), dump_path(std::move(dump)) {}
  std::filesystem::path dump_path;
};

struct AttackTrainResult {
  AttackerModel<float> generator;
  CriticModel<float> critic;
  TrainLog log;
};

/// Alternating WGAN training of generator and critic against a frozen segmenter.
/// Each generator step is preceded by critic_steps_per_gen critic updates,
/// each followed by weight clipping.
AttackTrainResult train_attacker(AttackerModel<float> gen, CriticModel<float> critic, const UNet<float>& seg,
                                 const std::vector<Image>& data, const TrainConfig& cfg);

}  // namespace advseg

#endif  // ADVSEG_TRAINER_HPP_
