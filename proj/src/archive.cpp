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
#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "advseg/tensorio.hpp"

namespace advseg {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "advseg-tensors";

template <typename T>
void write_le(std::ofstream& out, const std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
}

template <typename T>
std::vector<T> read_le(const fs::path& file, std::int64_t count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = std::int64_t(in.tellg());
  if (bytes != count * std::int64_t(sizeof(T))) {
    throw DataError(file.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " +
                    std::to_string(bytes));
  }
  in.seekg(0);
  std::vector<T> values(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : values) {
      auto b = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(b.begin(), b.end());
      v = std::bit_cast<T>(b);
    }
  }
  return values;
}

bool is_nifti(const fs::path& p) {
  const std::string name = p.filename().string();
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz");
}

// "<id>_img.nii.gz" -> ("<id>", ".nii.gz"); empty id if the convention is not followed.
std::pair<std::string, std::string> nifti_stem(const fs::path& p) {
  std::string name = p.filename().string();
  std::string ext = name.size() > 7 && name.ends_with(".nii.gz") ? ".nii.gz" : ".nii";
  std::string base = name.substr(0, name.size() - ext.size());
  if (!base.ends_with("_img")) return {"", ext};
  return {base.substr(0, base.size() - 4), ext};
}

void check_labels(const LabelMap& l, const std::string& where) {
  for (Index i = 0; i < l.labels.size(); ++i) {
    const int v = l.labels[i];
    if (v < 0 || v > l.num_classes) {
      throw DataError(where + ": label out of range (" + std::to_string(v) + " not in [0, " +
                      std::to_string(l.num_classes) + "])");
    }
  }
}

}  // namespace

std::int64_t ArchiveArray::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const std::vector<float>& ArchiveArray::f32() const {
  if (const auto* v = std::get_if<std::vector<float>>(&data)) return *v;
  throw DataError("array " + name + " is not f32");
}

const std::vector<std::int32_t>& ArchiveArray::i32() const {
  if (const auto* v = std::get_if<std::vector<std::int32_t>>(&data)) return *v;
  throw DataError("array " + name + " is not i32");
}

const ArchiveArray& Archive::at(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw DataError("archive has no array named " + name);
}

bool Archive::contains(const std::string& name) const {
  return std::any_of(arrays.begin(), arrays.end(), [&](const ArchiveArray& a) { return a.name == name; });
}

void write_archive(const fs::path& dir, const Archive& archive) {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = 1;
  manifest["byte_order"] = "little";
  manifest["arrays"] = nlohmann::json::array();
  for (const auto& a : archive.arrays) {
    const std::size_t n = std::visit([](const auto& v) { return v.size(); }, a.data);
    if (std::int64_t(n) != a.element_count()) throw std::invalid_argument("archive array " + a.name + ": shape/data size mismatch");
    if (a.name.empty() || a.name.find_first_of("/\\") != std::string::npos) {
      throw std::invalid_argument("archive array name must be a plain file stem: " + a.name);
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& a : archive.arrays) {
    const bool f32 = std::holds_alternative<std::vector<float>>(a.data);
    const std::string file = a.name + ".bin";
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / file).string());
    if (f32) write_le(out, std::get<std::vector<float>>(a.data));
    else write_le(out, std::get<std::vector<std::int32_t>>(a.data));
    if (!out) throw DataError("write failed: " + (dir / file).string());
    manifest["arrays"].push_back({{"name", a.name}, {"dtype", f32 ? "f32" : "i32"}, {"shape", a.shape}, {"file", file}});
  }
  manifest["meta"] = archive.meta;
  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / kManifest).string());
  out << manifest.dump(2) << "\n";
  if (!out) throw DataError("write failed: " + (dir / kManifest).string());
}

Archive read_archive(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw DataError("cannot open " + (dir / kManifest).string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / kManifest).string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw DataError((dir / kManifest).string() + ": not an advseg archive");
  if (manifest.value("byte_order", "") != "little") throw DataError("unsupported byte order");
  Archive archive;
  archive.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    ArchiveArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    const fs::path file = dir / entry.at("file").get<std::string>();
    if (dtype == "f32") a.data = read_le<float>(file, a.element_count());
    else if (dtype == "i32") a.data = read_le<std::int32_t>(file, a.element_count());
    else throw DataError("unsupported dtype " + dtype);
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

void save_volume(const fs::path& path, const Volume& v, const LabelMap& l) {
  if (v.slices != l.slices || v.rows != l.rows || v.cols != l.cols ||
      v.voxels.size() != Index(v.slices) * v.rows * v.cols || l.labels.size() != v.voxels.size()) {
    throw std::invalid_argument("save_volume: image and label shapes differ");
  }
  Archive a;
  const std::vector<std::int64_t> shape{v.slices, v.rows, v.cols};
  a.arrays.push_back({"image", shape, std::vector<float>(v.voxels.data(), v.voxels.data() + v.voxels.size())});
  a.arrays.push_back({"labels", shape, std::vector<std::int32_t>(l.labels.data(), l.labels.data() + l.labels.size())});
  a.meta = {{"kind", "volume"}, {"subject_id", v.subject_id}, {"spacing", v.spacing}, {"num_classes", l.num_classes}};
  write_archive(path, a);
}

Subject load_volume(const fs::path& path, std::optional<int> num_classes) {
  if (fs::is_directory(path)) {
    const Archive a = read_archive(path);
    const auto& img = a.at("image");
    const auto& lbl = a.at("labels");
    if (img.shape.size() != 3 || img.shape != lbl.shape) throw DataError(path.string() + ": image/label shape mismatch");
    Subject s;
    s.volume = Volume(int(img.shape[0]), int(img.shape[1]), int(img.shape[2]),
                      a.meta.value("subject_id", path.filename().string()));
    if (a.meta.contains("spacing")) s.volume.spacing = a.meta.at("spacing").get<std::array<double, 3>>();
    s.volume.voxels = Eigen::Map<const Eigen::ArrayXf>(img.f32().data(), Index(img.f32().size()));
    const int classes = num_classes.value_or(a.meta.value("num_classes", 0));
    s.labels = LabelMap(s.volume.slices, s.volume.rows, s.volume.cols, classes);
    s.labels.labels = Eigen::Map<const Eigen::Array<std::int32_t, Eigen::Dynamic, 1>>(lbl.i32().data(), Index(lbl.i32().size()));
    if (!s.volume.voxels.isFinite().all()) throw DataError(path.string() + ": non-finite voxels");
    check_labels(s.labels, path.string());
    return s;
  }
  if (!is_nifti(path)) throw DataError("unsupported volume file: " + path.string());
  const auto [id, ext] = nifti_stem(path);
  if (id.empty()) throw DataError(path.string() + ": expected <id>_img.nii[.gz]");
  const fs::path label_path = path.parent_path() / (id + "_lbl" + ext);
  const NiftiVolume img = read_nifti(path);
  const NiftiVolume lbl = read_nifti(label_path);
  if (img.dims != lbl.dims) throw DataError(path.string() + ": image/label shape mismatch");
  Subject s;
  s.volume = Volume(img.dims[2], img.dims[1], img.dims[0], id);
  s.volume.spacing = {img.pixdim[2], img.pixdim[1], img.pixdim[0]};
  for (std::size_t i = 0; i < img.data.size(); ++i) s.volume.voxels[Index(i)] = float(img.data[i]);
  if (!s.volume.voxels.isFinite().all()) throw DataError(path.string() + ": non-finite voxels");
  int max_label = 0;
  s.labels = LabelMap(s.volume.slices, s.volume.rows, s.volume.cols, 0);
  for (std::size_t i = 0; i < lbl.data.size(); ++i) {
    const double v = lbl.data[i];
    if (v != std::floor(v)) throw DataError(label_path.string() + ": non-integer label");
    s.labels.labels[Index(i)] = std::int32_t(v);
    max_label = std::max(max_label, int(v));
  }
  s.labels.num_classes = num_classes.value_or(max_label);
  check_labels(s.labels, label_path.string());
  return s;
}

std::vector<Subject> load_dataset(const fs::path& dir, std::optional<int> num_classes) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::map<std::string, fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / kManifest)) {
      entries[e.path().filename().string()] = e.path();
    } else if (e.is_regular_file() && is_nifti(e.path())) {
      const auto [id, ext] = nifti_stem(e.path());
      if (!id.empty()) entries[id] = e.path();
    }
  }
  std::vector<Subject> subjects;
  for (const auto& [id, path] : entries) {
    subjects.push_back(load_volume(path, num_classes));
    subjects.back().volume.subject_id = id;
  }
  return subjects;
}

}  // namespace advseg
