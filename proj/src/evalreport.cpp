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
#include "advseg/evalreport.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "advseg/checkpoint.hpp"
#include "advseg/tensorio.hpp"

namespace advseg {

std::string to_string(AttackMode m) {
  switch (m) {
    case AttackMode::kDV: return "DV";
    case AttackMode::kDOnly: return "D_only";
    case AttackMode::kVOnly: return "V_only";
  }
  return "?";
}

AttackMode parse_attack_mode(const std::string& s) {
  if (s == "DV") return AttackMode::kDV;
  if (s == "D_only") return AttackMode::kDOnly;
  if (s == "V_only") return AttackMode::kVOnly;
  throw std::invalid_argument("unknown attack mode \"" + s + "\" (expected DV, D_only or V_only)");
}

std::vector<AttackMode> parse_attack_modes(const std::string& comma_list) {
  std::vector<AttackMode> out;
  std::stringstream in(comma_list);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(parse_attack_mode(item));
  }
  if (out.empty()) throw std::invalid_argument("no attack modes given");
  return out;
}

double EvalReport::mean_dice() const {
  if (per_class_dice.empty()) return 0.0;
  return std::accumulate(per_class_dice.begin(), per_class_dice.end(), 0.0) / double(per_class_dice.size());
}

int worker_threads() {
  const char* env = std::getenv("ADVSEG_NUM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw std::invalid_argument("ADVSEG_NUM_THREADS must be a positive integer");
  return int(std::min<long>(n, 256));
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers in contiguous blocks.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::size_t(std::max(threads, 1)), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * block; i < std::min(n, (w + 1) * block); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

Image attacked_image(const AttackSample& s, const Image& clean, AttackMode mode) {
  switch (mode) {
    case AttackMode::kDV: return s.attacked;
    case AttackMode::kDOnly: return apply_deformation(clean, s.field);
    case AttackMode::kVOnly: return clean + s.bias;
  }
  return s.attacked;
}

std::vector<AttackSample> sample_test_attacks(const AttackerModel<float>& gen, const SliceSet& test,
                                              std::uint64_t seed) {
  std::vector<AttackSample> out(test.size());
  parallel_for(test.size(), worker_threads(), [&](std::size_t i) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(i)};
    Rng rng(seq);
    out[i] = generate(gen, test.images[i], rng);
  });
  return out;
}

EvalReport evaluate_attack(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test, double xi,
                           AttackMode mode, std::uint64_t seed) {
  if (test.empty()) throw std::invalid_argument("evaluate_attack: empty test set");
  return evaluate_attack(gen, seg, test, xi, mode, seed, evaluate_segmenter(seg, test, seg.num_classes()));
}

EvalReport evaluate_attack(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test, double xi,
                           AttackMode mode, std::uint64_t seed, const std::vector<double>& baseline) {
  if (test.empty()) throw std::invalid_argument("evaluate_attack: empty test set");
  if (int(baseline.size()) != seg.num_classes()) throw std::invalid_argument("evaluate_attack: baseline size mismatch");
  const std::vector<AttackSample> attacks = sample_test_attacks(gen, test, seed);
  SliceSet attacked = test;
  double p = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    attacked.images[i] = attacked_image(attacks[i], test.images[i], mode);
    p += perceptibility(attacked.images[i], test.images[i]);
  }
  EvalReport r;
  r.xi = xi;
  r.mode = mode;
  r.baseline_dice = baseline;
  r.per_class_dice = evaluate_segmenter(seg, attacked, seg.num_classes());
  r.perceptibility = p / double(test.size());
  for (std::size_t c = 0; c < baseline.size(); ++c) r.success.push_back(attack_success(baseline[c], r.per_class_dice[c]));
  return r;
}

std::string ReportTable::header() const {
  std::string h = "xi,mode";
  for (int c = 1; c <= num_classes; ++c) h += ",dice_class_" + std::to_string(c);
  h += ",perceptibility";
  for (int c = 1; c <= num_classes; ++c) h += ",success_class_" + std::to_string(c);
  return h;
}

std::string ReportTable::csv() const {
  std::ostringstream out;
  out << header() << "\n";
  out << ",clean";
  for (double d : baseline_dice) out << "," << fmt(d);
  out << "," << fmt(0.0);
  for (int c = 0; c < num_classes; ++c) out << ",0";
  out << "\n";
  out << ",success_threshold";
  for (double d : baseline_dice) out << "," << fmt(kSuccessRatio * d);
  out << ",";
  for (int c = 0; c < num_classes; ++c) out << ",";
  out << "\n";
  for (const auto& r : rows) {
    out << fmt(r.xi) << "," << to_string(r.mode);
    for (double d : r.per_class_dice) out << "," << fmt(d);
    out << "," << fmt(r.perceptibility);
    for (bool s : r.success) out << "," << (s ? 1 : 0);
    out << "\n";
  }
  return out.str();
}

void ReportTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << csv();
  if (!out) throw DataError("write failed: " + path.string());
}

ReportTable sweep_xi(const std::map<double, AttackerModel<float>>& generators, const UNet<float>& seg,
                     const SliceSet& test, const std::vector<double>& xis, const std::vector<AttackMode>& modes,
                     std::uint64_t seed) {
  if (xis.empty()) throw std::invalid_argument("sweep_xi: no xi values");
  if (test.empty()) throw std::invalid_argument("sweep_xi: empty test set");
  std::string missing;
  for (double xi : xis) {
    if (!generators.contains(xi)) missing += (missing.empty() ? "" : ", ") + fmt(xi);
  }
  if (!missing.empty()) throw DataError("missing attacker checkpoint for xi = " + missing);
  ReportTable table;
  table.num_classes = seg.num_classes();
  table.baseline_dice = evaluate_segmenter(seg, test, seg.num_classes());
  for (double xi : xis) {
    for (AttackMode m : modes) {
      table.rows.push_back(evaluate_attack(generators.at(xi), seg, test, xi, m, seed, table.baseline_dice));
    }
  }
  return table;
}

std::array<std::uint8_t, 4> Raster::at(int x, int y) const {
  const std::size_t i = (std::size_t(y) * std::size_t(width) + std::size_t(x)) * 4;
  return {rgba[i], rgba[i + 1], rgba[i + 2], rgba[i + 3]};
}

std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{230, 25, 75},
                                                                        {60, 180, 75},
                                                                        {0, 130, 200},
                                                                        {255, 225, 25},
                                                                        {245, 130, 48},
                                                                        {145, 30, 180},
                                                                        {70, 240, 240},
                                                                        {240, 50, 230}}};
  if (class_id < 1) throw std::invalid_argument("class_color: background has no colour");
  return kPalette[std::size_t(class_id - 1) % kPalette.size()];
}

namespace {

class TileWriter {
 public:
  TileWriter(Raster& r, int rows, int cols) : r_(r), rows_(rows), cols_(cols) {}

  void put(int tile_row, int tile_col, int y, int x, std::array<std::uint8_t, 4> px) {
    const int gx = tile_col * (cols_ + kMontageGap) + x;
    const int gy = tile_row * (rows_ + kMontageGap) + y;
    std::copy(px.begin(), px.end(), r_.rgba.begin() + std::ptrdiff_t((std::size_t(gy) * r_.width + gx) * 4));
  }

  void gray(int tr, int tc, const Image& img, float lo, float hi) {
    const float span = hi > lo ? hi - lo : 1.0f;
    for (int y = 0; y < rows_; ++y) {
      for (int x = 0; x < cols_; ++x) {
        const float t = std::clamp((img(y, x) - lo) / span, 0.0f, 1.0f);
        const auto v = std::uint8_t(std::lround(t * 255.0f));
        put(tr, tc, y, x, {v, v, v, 255});
      }
    }
  }

  void labels(int tr, int tc, const LabelGrid& l) {
    for (int y = 0; y < rows_; ++y) {
      for (int x = 0; x < cols_; ++x) {
        if (l(y, x) <= 0) continue;
        const auto c = class_color(l(y, x));
        put(tr, tc, y, x, {c[0], c[1], c[2], 255});
      }
    }
  }

 private:
  Raster& r_;
  int rows_, cols_;
};

}  // namespace

Raster render_montage(const std::vector<MontageCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("render_montage: no cases");
  const int rows = int(cases.front().i0.rows());
  const int cols = int(cases.front().i0.cols());
  for (const auto& c : cases) {
    const bool ok = c.i0.rows() == rows && c.i0.cols() == cols && c.s_gt.rows() == rows && c.s_gt.cols() == cols &&
                    c.s0.rows() == rows && c.s0.cols() == cols && c.i_dv.rows() == rows && c.i_dv.cols() == cols &&
                    c.v.rows() == rows && c.v.cols() == cols && c.s_dv.rows() == rows && c.s_dv.cols() == cols;
    if (!ok) throw std::invalid_argument("render_montage: misaligned shapes");
  }
  Raster r;
  const int n = int(cases.size());
  r.width = n * cols + (n - 1) * kMontageGap;
  r.height = 6 * rows + 5 * kMontageGap;
  r.rgba.assign(std::size_t(r.width) * std::size_t(r.height) * 4, 0);
  TileWriter tiles(r, rows, cols);
  for (int k = 0; k < n; ++k) {
    const MontageCase& c = cases[std::size_t(k)];
    const float lo = std::min(c.i0.minCoeff(), c.i_dv.minCoeff());
    const float hi = std::max(c.i0.maxCoeff(), c.i_dv.maxCoeff());
    const float vmax = std::max(c.v.abs().maxCoeff(), 1e-12f);
    tiles.gray(0, k, c.i0, lo, hi);
    tiles.labels(1, k, c.s_gt);
    tiles.labels(2, k, c.s0);
    tiles.gray(3, k, c.i_dv, lo, hi);
    tiles.gray(4, k, c.v, -vmax, vmax);
    tiles.labels(5, k, c.s_dv);
  }
  return r;
}

void write_png(const std::filesystem::path& path, const Raster& r) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(r.width), png_uint_32(r.height), 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y) {
    png_write_row(png, r.rgba.data() + std::size_t(y) * std::size_t(r.width) * 4);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw DataError("write failed: " + path.string());
}

void render_montage(const std::vector<MontageCase>& cases, const std::filesystem::path& path) {
  write_png(path, render_montage(cases));
}

void save_attack_bundle(const std::filesystem::path& dir, const Image& i0, const AttackSample& attack,
                        const SoftSegmentation& s0, const SoftSegmentation& s_dv, nlohmann::json meta) {
  Archive a;
  a.arrays.push_back(to_array("I0", image_tensor(i0)));
  a.arrays.push_back(to_array("D", field_tensor(attack.field)));
  a.arrays.push_back(to_array("V", image_tensor(attack.bias)));
  a.arrays.push_back(to_array("I_DV", image_tensor(attack.attacked)));
  a.arrays.push_back(to_array("S0", s0.probs));
  a.arrays.push_back(to_array("S_DV", s_dv.probs));
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["kind"] = "attack_bundle";
  a.meta = std::move(meta);
  write_archive(dir, a);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace advseg
