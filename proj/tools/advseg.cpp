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
// advseg: command-line driver for phantom generation, segmenter training,
// attack training, evaluation and montage rendering.
//
// Exit codes: 0 success, 1 invalid configuration or arguments,
// 2 runtime or data error, 3 training collapse.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advseg/experiment.hpp"

namespace {

using advseg::ExperimentConfig;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCollapse = 3;

std::vector<double> parse_xi_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw advseg::ConfigError("invalid xi value \"" + item + "\"");
    if (!(v > 0)) throw advseg::ConfigError("xi values must be > 0");
    out.push_back(v);
  }
  if (out.empty()) throw advseg::ConfigError("empty xi list");
  return out;
}

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : advseg::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

void print_report(const advseg::ReportTable& t) { std::cout << t.csv(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial deformation and intensity attacks on a segmentation network"};
  app.require_subcommand(1);
  GlobalOptions g;
  auto add_globals = [&g](CLI::App* sub) {
    sub->add_option("--config", g.config, "JSON experiment configuration");
    sub->add_option("--seed", g.seed, "Global seed (overrides the configuration)");
    sub->add_option("--out", g.out, "Output directory (overrides the configuration)");
    sub->add_flag("--force", g.force, "Overwrite existing outputs");
  };

  auto* phantoms = app.add_subcommand("make-phantoms", "Write a synthetic phantom dataset and its split");
  auto* train_seg = app.add_subcommand("train-seg", "Train and freeze the segmenter");
  auto* train_attack = app.add_subcommand("train-attack", "Train a generator/critic pair for one xi");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained attackers and write reports");
  auto* montage = app.add_subcommand("montage", "Render attack montages");
  for (auto* sub : {phantoms, train_seg, train_attack, evaluate, montage}) add_globals(sub);

  double xi = 0;
  train_attack->add_option("--xi", xi, "Target masked cross-entropy")->required();
  std::string xi_list;
  std::string modes;
  evaluate->add_option("--xi-list", xi_list, "Comma-separated xi values (default: configuration)");
  evaluate->add_option("--modes", modes, "Comma-separated subset of DV,D_only,V_only (default: configuration)");
  montage->add_option("--xi-list", xi_list, "Comma-separated xi values (default: configuration)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const ExperimentConfig cfg = resolve(g);
    const advseg::Experiment exp(cfg, g.force);
    if (phantoms->parsed()) {
      const auto split = exp.make_phantoms();
      std::cout << "wrote " << cfg.data.num_subjects << " subjects to " << exp.data_dir().string() << " ("
                << split.train_ids.size() << "/" << split.val_ids.size() << "/" << split.test_ids.size() << ")\n";
    } else if (train_seg->parsed()) {
      const auto r = exp.train_segmenter();
      for (const auto& e : r.curve) {
        std::cout << "epoch " << e.epoch << " train_xent " << e.train_xent << " val_dice " << e.val_dice << "\n";
      }
      std::cout << "best epoch " << r.best_epoch << " val_dice " << r.best_val_dice << "\n";
    } else if (train_attack->parsed()) {
      if (!(xi > 0)) throw advseg::ConfigError("xi must be > 0");
      const auto r = exp.train_attack(xi);
      if (!r.log.empty()) {
        const auto& last = r.log.rows.back();
        std::cout << "step " << last.step << " L_gen " << last.l_gen << " L_disc " << last.l_disc << " masked_xent "
                  << last.masked_xent << "\n";
      }
      std::cout << "saved " << exp.attacker_dir(xi).string() << "\n";
    } else if (evaluate->parsed()) {
      const auto xis = xi_list.empty() ? cfg.eval.xi_list : parse_xi_list(xi_list);
      const auto m = modes.empty() ? cfg.eval.modes : advseg::parse_attack_modes(modes);
      print_report(exp.evaluate(xis, m));
    } else if (montage->parsed()) {
      exp.montage(xi_list.empty() ? cfg.eval.xi_list : parse_xi_list(xi_list));
      std::cout << "montages written to " << exp.eval_dir().string() << "\n";
    }
  } catch (const advseg::TrainingCollapse& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCollapse;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
