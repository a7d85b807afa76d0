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
#ifndef ADVSEG_EXPERIMENT_HPP_
#define ADVSEG_EXPERIMENT_HPP_

// Experiment lifecycle shared by the command-line tool: configuration,
// on-disk layout, and the make-phantoms / train-seg / train-attack /
// evaluate / montage steps.
//
// Layout under output_dir:
//   data/<subject>/          phantom subjects (raw tensor archives)
//   data/split.json
//   segmenter/model/         frozen segmenter checkpoint
//   segmenter/curve.csv
//   attacker/xi_<v>/generator, critic, train_log.csv, meta.json
//   eval/report.csv, report.json, montage_xi_<v>.png

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advseg/attacker.hpp"
#include "advseg/evalreport.hpp"
#include "advseg/segmenter.hpp"
#include "advseg/tensorio.hpp"
#include "advseg/trainer.hpp"

#include "json.hpp"

namespace advseg {

/// Invalid configuration or command-line input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "phantom";  ///< "phantom" or "directory"
  std::string path;                ///< dataset directory when source = "directory"
  int num_subjects = 20;
  int slices_per_subject = 8;
  int rows = 64;
  int cols = 64;
  int num_classes = 4;
  std::array<int, 3> split{16, 2, 2};
};

struct SegmenterSection {
  UNetConfig model;
  SegTrainConfig train;
};

struct AttackerSection {
  AttackerConfig model;
  int critic_base_channels = 16;
};

struct EvalConfig {
  std::vector<double> xi_list{0.5, 2.0};
  std::vector<AttackMode> modes{AttackMode::kDV, AttackMode::kDOnly, AttackMode::kVOnly};
  int montage_cases = 4;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "advseg_run";
  DataConfig data;
  SegmenterSection segmenter;
  AttackerSection attacker;
  TrainConfig trainer;
  EvalConfig eval;

  /// Parses and validates; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// "xi_0.5", "xi_2", ...
std::string xi_tag(double xi);

class Experiment {
 public:
  Experiment(ExperimentConfig cfg, bool force);

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path data_dir() const;
  std::filesystem::path segmenter_dir() const { return cfg_.output_dir / "segmenter"; }
  std::filesystem::path attacker_dir(double xi) const { return cfg_.output_dir / "attacker" / xi_tag(xi); }
  std::filesystem::path eval_dir() const { return cfg_.output_dir / "eval"; }

  /// Writes num_subjects phantoms and split.json; returns the split.
  DatasetSplit make_phantoms() const;

  /// Normalized slices of one split part ("train", "val" or "test").
  SliceSet load_slices(const std::string& part) const;

  SegTrainResult train_segmenter() const;
  UNet<float> load_segmenter() const;

  AttackTrainResult train_attack(double xi) const;
  AttackerModel<float> load_generator(double xi) const;

  /// Writes report.csv, report.json and one DV montage per xi.
  ReportTable evaluate(const std::vector<double>& xis, const std::vector<AttackMode>& modes) const;
  void montage(const std::vector<double>& xis) const;

 private:
  DatasetSplit load_split() const;
  /// Clears `dir` for writing; throws unless it is absent or --force was given.
  void prepare_output(const std::filesystem::path& dir) const;
  void render_montage_for(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test,
                          double xi) const;

  ExperimentConfig cfg_;
  bool force_ = false;
};

}  // namespace advseg

#endif  // ADVSEG_EXPERIMENT_HPP_
