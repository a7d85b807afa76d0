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
#ifndef ADVSEG_TENSORIO_HPP_
#define ADVSEG_TENSORIO_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "advseg/tensor.hpp"

namespace advseg {

namespace fs = std::filesystem;

/// Raised for unreadable, malformed, or inconsistent data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-subject intensity volume, slices x rows x cols, slice-major.
struct Volume {
  int slices = 0;
  int rows = 0;
  int cols = 0;
  Eigen::ArrayXf voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  ///< (slice, row, col) in mm
  std::string subject_id;

  Volume() = default;
  Volume(int s, int r, int c, std::string id = {})
      : slices(s), rows(r), cols(c), voxels(Eigen::ArrayXf::Zero(Index(s) * r * c)), subject_id(std::move(id)) {}

  Image slice(int s) const;
  void set_slice(int s, const Image& img);
};

/// Hard labels aligned with a Volume; 0 is background, 1..num_classes are organs.
struct LabelMap {
  int slices = 0;
  int rows = 0;
  int cols = 0;
  Eigen::Array<std::int32_t, Eigen::Dynamic, 1> labels;
  int num_classes = 0;

  LabelMap() = default;
  LabelMap(int s, int r, int c, int classes)
      : slices(s), rows(r), cols(c), labels(Eigen::Array<std::int32_t, Eigen::Dynamic, 1>::Zero(Index(s) * r * c)),
        num_classes(classes) {}

  LabelGrid slice(int s) const;
  void set_slice(int s, const LabelGrid& grid);
};

struct Subject {
  Volume volume;
  LabelMap labels;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetSplit from_json(const nlohmann::json& j);
};

struct Patch {
  Image image;
  LabelGrid labels;
  int row = 0;  ///< origin in the source slice
  int col = 0;
};

struct Phantom {
  Image image;
  LabelGrid labels;
  int num_classes = 0;
};

/// Normalizes the whole volume to zero mean and unit standard deviation.
/// A constant volume maps to zeros.
Volume normalize(const Volume& v);

/// Seeded random partition of `ids` into train/val/test of the given sizes.
DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<int, 3> counts, std::uint64_t seed);

/// Samples `n` patches of `size` (rows, cols). At least half of the patches
/// contain a foreground pixel whenever the slice has any.
std::vector<Patch> extract_patches(const Image& image, const LabelGrid& labels, std::array<int, 2> size, int n,
                                   std::mt19937_64& rng);

/// Synthetic slice with `num_classes` non-overlapping soft-edged ellipses of
/// distinct intensity inside a textured body on an air background, plus noise.
/// Class 1 is the small organ (<= 2% of pixels), class num_classes the large
/// one (>= 8%) when num_classes >= 2.
Phantom make_phantom(std::uint64_t seed, std::array<int, 2> shape, int num_classes);

/// Stacks `slices` independent phantoms into one subject.
Subject make_phantom_subject(std::uint64_t seed, int slices, std::array<int, 2> shape, int num_classes,
                             const std::string& subject_id);

// Portable raw tensor format: a directory holding manifest.json plus one flat
// little-endian binary file per array.

struct ArchiveArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::variant<std::vector<float>, std::vector<std::int32_t>> data;

  std::int64_t element_count() const;
  const std::vector<float>& f32() const;
  const std::vector<std::int32_t>& i32() const;
};

struct Archive {
  std::vector<ArchiveArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  const ArchiveArray& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_archive(const fs::path& dir, const Archive& archive);
Archive read_archive(const fs::path& dir);

/// Writes image + labels in the raw tensor format. Shapes are checked before anything is written.
void save_volume(const fs::path& path, const Volume& v, const LabelMap& l);

/// Reads a raw tensor directory, or a NIfTI image `<id>_img.nii[.gz]` together
/// with its `<id>_lbl.nii[.gz]` companion. Labels must lie in [0, num_classes];
/// when `num_classes` is not given the archive metadata (or the label maximum
/// for NIfTI) decides.
Subject load_volume(const fs::path& path, std::optional<int> num_classes = std::nullopt);

/// Loads every subject under `dir` (raw tensor subdirectories and NIfTI pairs), sorted by id.
std::vector<Subject> load_dataset(const fs::path& dir, std::optional<int> num_classes = std::nullopt);

// NIfTI-1 single-file (.nii / .nii.gz) access.
struct NiftiVolume {
  std::array<int, 3> dims{};  ///< (x, y, z) = (cols, rows, slices)
  std::array<float, 3> pixdim{1, 1, 1};
  std::vector<double> data;   ///< scaled values, x fastest
};

NiftiVolume read_nifti(const fs::path& path);
void write_nifti(const fs::path& path, const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
                 const std::vector<float>& data);
void write_nifti_labels(const fs::path& path, const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
                        const std::vector<std::int32_t>& data);

}  // namespace advseg

#endif  // ADVSEG_TENSORIO_HPP_
