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
#include "advseg/tensorio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace advseg {

Image Volume::slice(int s) const {
  if (s < 0 || s >= slices) throw std::out_of_range("Volume::slice");
  return Eigen::Map<const Image>(voxels.data() + Index(s) * rows * cols, rows, cols);
}

void Volume::set_slice(int s, const Image& img) {
  if (s < 0 || s >= slices || img.rows() != rows || img.cols() != cols) throw std::out_of_range("Volume::set_slice");
  Eigen::Map<Image>(voxels.data() + Index(s) * rows * cols, rows, cols) = img;
}

LabelGrid LabelMap::slice(int s) const {
  if (s < 0 || s >= slices) throw std::out_of_range("LabelMap::slice");
  return Eigen::Map<const LabelGrid>(labels.data() + Index(s) * rows * cols, rows, cols);
}

void LabelMap::set_slice(int s, const LabelGrid& grid) {
  if (s < 0 || s >= slices || grid.rows() != rows || grid.cols() != cols) {
    throw std::out_of_range("LabelMap::set_slice");
  }
  Eigen::Map<LabelGrid>(labels.data() + Index(s) * rows * cols, rows, cols) = grid;
}

nlohmann::json DatasetSplit::to_json() const {
  return {{"train", train_ids}, {"val", val_ids}, {"test", test_ids}, {"seed", seed}};
}

DatasetSplit DatasetSplit::from_json(const nlohmann::json& j) {
  DatasetSplit s;
  s.train_ids = j.at("train").get<std::vector<std::string>>();
  s.val_ids = j.at("val").get<std::vector<std::string>>();
  s.test_ids = j.at("test").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

Volume normalize(const Volume& v) {
  constexpr double kStdFloor = 1e-8;
  Volume out = v;
  const Index n = v.voxels.size();
  if (n == 0) return out;
  const Eigen::ArrayXd x = v.voxels.cast<double>();
  const double mean = x.mean();
  const double var = (x - mean).square().mean();
  const double std = std::sqrt(var);
  if (std < kStdFloor) {
    out.voxels.setZero();
    return out;
  }
  out.voxels = ((x - mean) / std).cast<float>();
  return out;
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<int, 3> counts, std::uint64_t seed) {
  if (counts[0] < 0 || counts[1] < 0 || counts[2] < 0 ||
      std::size_t(counts[0]) + counts[1] + counts[2] != ids.size()) {
    throw std::invalid_argument("split_dataset: counts (" + std::to_string(counts[0]) + ", " +
                                std::to_string(counts[1]) + ", " + std::to_string(counts[2]) +
                                ") do not sum to " + std::to_string(ids.size()) + " ids");
  }
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw std::invalid_argument("split_dataset: duplicate ids");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplit split;
  split.seed = seed;
  auto it = order.begin();
  split.train_ids.assign(it, it + counts[0]);
  it += counts[0];
  split.val_ids.assign(it, it + counts[1]);
  it += counts[1];
  split.test_ids.assign(it, order.end());
  for (auto* part : {&split.train_ids, &split.val_ids, &split.test_ids}) std::sort(part->begin(), part->end());
  return split;
}

std::vector<Patch> extract_patches(const Image& image, const LabelGrid& labels, std::array<int, 2> size, int n,
                                   std::mt19937_64& rng) {
  const int rows = int(image.rows());
  const int cols = int(image.cols());
  const auto [ph, pw] = size;
  if (labels.rows() != rows || labels.cols() != cols) throw std::invalid_argument("extract_patches: shape mismatch");
  if (ph < 1 || pw < 1 || ph > rows || pw > cols) {
    throw std::invalid_argument("extract_patches: patch larger than slice");
  }
  std::vector<Index> foreground;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels.data()[i] > 0) foreground.push_back(i);
  }
  auto uniform = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  std::vector<Patch> patches;
  patches.reserve(std::size_t(std::max(n, 0)));
  for (int k = 0; k < n; ++k) {
    int r0 = 0;
    int c0 = 0;
    if (!foreground.empty() && k % 2 == 0) {
      const Index pick = foreground[std::size_t(uniform(0, int(foreground.size()) - 1))];
      const int fr = int(pick / cols);
      const int fc = int(pick % cols);
      r0 = uniform(std::max(0, fr - ph + 1), std::min(fr, rows - ph));
      c0 = uniform(std::max(0, fc - pw + 1), std::min(fc, cols - pw));
    } else {
      r0 = uniform(0, rows - ph);
      c0 = uniform(0, cols - pw);
    }
    patches.push_back({image.block(r0, c0, ph, pw), labels.block(r0, c0, ph, pw), r0, c0});
  }
  return patches;
}

namespace {

struct Ellipse {
  double cy, cx;   // centre
  double a, b;     // semi-axes, a >= b
  double theta;    // rotation
  // Squared normalized radius of (y, x); < 1 inside.
  double rho2(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = dx * std::cos(theta) + dy * std::sin(theta);
    const double v = -dx * std::sin(theta) + dy * std::cos(theta);
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
};

// Area fraction range of each organ class.
std::pair<double, double> area_range(int cls, int num_classes) {
  if (num_classes == 1) return {0.05, 0.09};
  if (cls == 1) return {0.008, 0.016};
  if (cls == num_classes) return {0.09, 0.12};
  return {0.025, 0.045};
}

}  // namespace

Phantom make_phantom(std::uint64_t seed, std::array<int, 2> shape, int num_classes) {
  const auto [rows, cols] = shape;
  if (num_classes < 1) throw std::invalid_argument("make_phantom: need at least one class");
  if (rows < 32 || cols < 32) throw std::invalid_argument("make_phantom: shape must be at least 32x32");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double body_ry = 0.47 * rows;
  const double body_rx = 0.47 * cols;
  const double cy0 = 0.5 * (rows - 1);
  const double cx0 = 0.5 * (cols - 1);
  const double npix = double(rows) * cols;

  constexpr int kMaxTries = 1000;
  constexpr int kTriesPerOrgan = 60;
  constexpr double kGap = 1.5;  // minimum clearance between organs and to the body edge, pixels
  auto inside_body = [&](double y, double x) {
    const double by = (y - cy0) / (body_ry - kGap);
    const double bx = (x - cx0) / (body_rx - kGap);
    return by * by + bx * bx < 1.0;
  };
  int tries = 0;
  for (;;) {
    // Largest organ first; a layout that gets stuck is restarted from scratch.
    std::vector<Ellipse> organs(std::size_t(num_classes) + 1);
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> occupied =
        decltype(occupied)::Constant(rows, cols, false);
    bool layout_ok = true;
    for (int cls = num_classes; cls >= 1 && layout_ok; --cls) {
      const auto [lo, hi] = area_range(cls, num_classes);
      const double area = uniform(lo, hi) * npix;
      const double ratio = uniform(0.7, 1.0);
      const double a = std::sqrt(area / (std::numbers::pi * ratio));
      Ellipse e{0, 0, a, a * ratio, uniform(0.0, std::numbers::pi)};
      Ellipse grown = e;
      grown.a += kGap;
      grown.b += kGap;
      bool ok = false;
      for (int attempt = 0; attempt < kTriesPerOrgan && !ok; ++attempt) {
        if (++tries > kMaxTries) {
          throw std::runtime_error("make_phantom: cannot place " + std::to_string(num_classes) +
                                   " non-overlapping organs within " + std::to_string(kMaxTries) + " tries");
        }
        grown.cy = e.cy = uniform(cy0 - body_ry + a, cy0 + body_ry - a);
        grown.cx = e.cx = uniform(cx0 - body_rx + a, cx0 + body_rx - a);
        const int r0 = std::max(0, int(std::floor(e.cy - grown.a)));
        const int r1 = std::min(rows - 1, int(std::ceil(e.cy + grown.a)));
        const int c0 = std::max(0, int(std::floor(e.cx - grown.a)));
        const int c1 = std::min(cols - 1, int(std::ceil(e.cx + grown.a)));
        ok = true;
        for (int r = r0; r <= r1 && ok; ++r) {
          for (int c = c0; c <= c1 && ok; ++c) {
            if (grown.rho2(r, c) < 1.0) ok = inside_body(r, c) && !occupied(r, c);
          }
        }
        if (!ok) continue;
        for (int r = r0; r <= r1; ++r) {
          for (int c = c0; c <= c1; ++c) {
            if (grown.rho2(r, c) < 1.0) occupied(r, c) = true;
          }
        }
      }
      layout_ok = ok;
      organs[std::size_t(cls)] = e;
    }
    if (!layout_ok) continue;

    // Distinct organ intensities spaced along the class index.
    std::vector<double> level(std::size_t(num_classes) + 1);
    for (int cls = 1; cls <= num_classes; ++cls) level[std::size_t(cls)] = 0.5 + 0.45 * cls + 0.03 * gauss(rng);

    const double fy = uniform(1.0, 3.0), fx = uniform(1.0, 3.0);
    const double py = uniform(0.0, 2 * std::numbers::pi), px = uniform(0.0, 2 * std::numbers::pi);

    Phantom p{Image(rows, cols), LabelGrid::Zero(rows, cols), num_classes};
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double by = (r - cy0) / body_ry;
        const double bx = (c - cx0) / body_rx;
        const double body_sd = (std::sqrt(by * by + bx * bx) - 1.0) * std::min(body_ry, body_rx);
        const double body_w = 1.0 / (1.0 + std::exp(body_sd / 0.75));
        const double texture = 0.1 * std::sin(2 * std::numbers::pi * fy * r / rows + py) +
                               0.1 * std::cos(2 * std::numbers::pi * fx * c / cols + px);
        double value = -1.0 + body_w * (1.0 + texture);
        for (int cls = 1; cls <= num_classes; ++cls) {
          const Ellipse& e = organs[std::size_t(cls)];
          const double rho2 = e.rho2(r, c);
          if (rho2 < 1.0) p.labels(r, c) = cls;
          const double sd = (std::sqrt(rho2) - 1.0) * e.b;
          const double w = 1.0 / (1.0 + std::exp(sd / 0.75));
          value += w * (level[std::size_t(cls)] - value);
        }
        p.image(r, c) = float(value + 0.08 * gauss(rng));
      }
    }

    std::vector<Index> counts(std::size_t(num_classes) + 1, 0);
    for (Index i = 0; i < p.labels.size(); ++i) ++counts[std::size_t(p.labels.data()[i])];
    bool valid = std::all_of(counts.begin() + 1, counts.end(), [](Index n) { return n > 0; });
    if (num_classes >= 2) {
      valid = valid && counts[1] <= 0.02 * npix && counts[std::size_t(num_classes)] >= 0.08 * npix;
    }
    if (valid) return p;
    if (++tries > kMaxTries) throw std::runtime_error("make_phantom: class size constraints not met");
  }
}

Subject make_phantom_subject(std::uint64_t seed, int slices, std::array<int, 2> shape, int num_classes,
                             const std::string& subject_id) {
  if (slices < 1) throw std::invalid_argument("make_phantom_subject: need at least one slice");
  Subject s{Volume(slices, shape[0], shape[1], subject_id), LabelMap(slices, shape[0], shape[1], num_classes)};
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x9e3779b9u};
  std::vector<std::uint32_t> raw(std::size_t(slices) * 2);
  seq.generate(raw.begin(), raw.end());
  for (int k = 0; k < slices; ++k) {
    const std::uint64_t slice_seed = (std::uint64_t(raw[std::size_t(2 * k)]) << 32) | raw[std::size_t(2 * k + 1)];
    Phantom p = make_phantom(slice_seed, shape, num_classes);
    s.volume.set_slice(k, p.image);
    s.labels.set_slice(k, p.labels);
  }
  return s;
}

}  // namespace advseg
