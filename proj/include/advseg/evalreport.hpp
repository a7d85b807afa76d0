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
#ifndef ADVSEG_EVALREPORT_HPP_
#define ADVSEG_EVALREPORT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advseg/attacker.hpp"
#include "advseg/metrics.hpp"
#include "advseg/segmenter.hpp"

#include "json.hpp"

namespace advseg {

enum class AttackMode { kDV, kDOnly, kVOnly };

std::string to_string(AttackMode m);
AttackMode parse_attack_mode(const std::string& s);
std::vector<AttackMode> parse_attack_modes(const std::string& comma_list);

struct EvalReport {
  double xi = 0;
  AttackMode mode = AttackMode::kDV;
  std::vector<double> baseline_dice;   ///< clean Dice, index 0 = class 1
  std::vector<double> per_class_dice;  ///< Dice under attack
  double perceptibility = 0;
  std::vector<bool> success;

  int num_classes() const { return int(per_class_dice.size()); }
  double mean_dice() const;
};

/// Worker count from ADVSEG_NUM_THREADS (default 1, at least 1).
int worker_threads();

/// Attacked image of one slice in the given mode.
Image attacked_image(const AttackSample& s, const Image& clean, AttackMode mode);

/// Per-slice attacks for `test`; slice i draws its latent noise from a
/// generator seeded with (seed, i), so results do not depend on the worker count.
std::vector<AttackSample> sample_test_attacks(const AttackerModel<float>& gen, const SliceSet& test,
                                              std::uint64_t seed);

/// One seeded attack per test slice; Dice macro-averaged over subjects,
/// perceptibility averaged over slices.
EvalReport evaluate_attack(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test, double xi,
                           AttackMode mode, std::uint64_t seed);

/// As above with the clean baseline supplied by the caller.
EvalReport evaluate_attack(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test, double xi,
                           AttackMode mode, std::uint64_t seed, const std::vector<double>& baseline);

/// Clean evaluation plus one row per (xi, mode), in the order given.
struct ReportTable {
  int num_classes = 0;
  std::vector<double> baseline_dice;
  std::vector<EvalReport> rows;

  std::string header() const;
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Evaluates every requested xi with every mode. Throws listing all xi values
/// without a generator.
ReportTable sweep_xi(const std::map<double, AttackerModel<float>>& generators, const UNet<float>& seg,
                     const SliceSet& test, const std::vector<double>& xis, const std::vector<AttackMode>& modes,
                     std::uint64_t seed);

// Montage rendering.

struct MontageCase {
  Image i0;
  LabelGrid s_gt;
  LabelGrid s0;
  Image i_dv;
  Image v;
  LabelGrid s_dv;
};

/// RGBA raster, row-major, 4 bytes per pixel.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;

  std::array<std::uint8_t, 4> at(int x, int y) const;
};

inline constexpr int kMontageGap = 2;

/// Fixed class colours; class c uses entry (c - 1) modulo the palette size.
std::array<std::uint8_t, 3> class_color(int class_id);

/// Six rows (I0, ground truth, clean prediction, attacked image, V, attacked
/// prediction) by one column per case. Images share the display range of the
/// case's I0 and I_DV, V is mapped symmetrically around mid-grey, and
/// background labels are transparent.
Raster render_montage(const std::vector<MontageCase>& cases);

void write_png(const std::filesystem::path& path, const Raster& r);

void render_montage(const std::vector<MontageCase>& cases, const std::filesystem::path& path);

/// Saves I0, D, V, I_DV, S0 and S_DV of one attacked slice as an archive.
void save_attack_bundle(const std::filesystem::path& dir, const Image& i0, const AttackSample& attack,
                        const SoftSegmentation& s0, const SoftSegmentation& s_dv, nlohmann::json meta);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace advseg

#endif  // ADVSEG_EVALREPORT_HPP_
