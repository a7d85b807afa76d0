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
// Minimal NIfTI-1 single-file reader/writer. Compressed and plain files both go
// through zlib (gzread passes uncompressed data through unchanged).

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <memory>

#include "advseg/tensorio.hpp"

namespace advseg {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
};

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

template <typename T>
void swap_bytes(T& v) {
  auto* b = reinterpret_cast<unsigned char*>(&v);
  std::reverse(b, b + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
}

template <typename T>
void decode(const std::vector<unsigned char>& raw, bool swap, std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    if (swap) swap_bytes(v);
    out[i] = double(v);
  }
}

std::size_t type_size(std::int16_t datatype) {
  switch (datatype) {
    case kUint8:
    case kInt8: return 1;
    case kInt16:
    case kUint16: return 2;
    case kInt32:
    case kUint32:
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

void write_file(const fs::path& path, const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
                std::int16_t datatype, const void* data, std::size_t bytes) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int i = 0; i < 3; ++i) {
    h.dim[i + 1] = std::int16_t(dims[std::size_t(i)]);
    h.pixdim[i + 1] = pixdim[std::size_t(i)];
  }
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.pixdim[0] = 1.0f;
  h.datatype = datatype;
  h.bitpix = std::int16_t(8 * type_size(datatype));
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  std::memcpy(h.magic, "n+1", 4);
  const bool gz = path.string().ends_with(".gz");
  GzHandle f(gzopen(path.string().c_str(), gz ? "wb6" : "wbT"));
  if (!f) throw DataError("cannot write " + path.string());
  const char extension[4] = {0, 0, 0, 0};
  if (gzwrite(f.get(), &h, sizeof(h)) != int(sizeof(h)) || gzwrite(f.get(), extension, 4) != 4 ||
      gzwrite(f.get(), data, unsigned(bytes)) != int(bytes)) {
    throw DataError("write failed: " + path.string());
  }
}

}  // namespace

NiftiVolume read_nifti(const fs::path& path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path.string());
  Nifti1Header h{};
  if (gzread(f.get(), &h, sizeof(h)) != int(sizeof(h))) throw DataError(path.string() + ": truncated header");
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw DataError(path.string() + ": not a NIfTI-1 file");
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0) throw DataError(path.string() + ": only single-file NIfTI-1 is supported");
  if (h.dim[0] < 2 || h.dim[0] > 7) throw DataError(path.string() + ": unsupported dimensionality");
  for (int i = 4; i <= h.dim[0]; ++i) {
    if (h.dim[i] > 1) throw DataError(path.string() + ": 4D+ volumes are not supported");
  }
  NiftiVolume v;
  for (int i = 0; i < 3; ++i) {
    const int d = i < h.dim[0] ? h.dim[i + 1] : 1;
    if (d < 1) throw DataError(path.string() + ": invalid dimension");
    v.dims[std::size_t(i)] = d;
    v.pixdim[std::size_t(i)] = i < h.dim[0] && h.pixdim[i + 1] > 0 ? h.pixdim[i + 1] : 1.0f;
  }
  const std::size_t tsize = type_size(h.datatype);
  if (tsize == 0) throw DataError(path.string() + ": unsupported datatype " + std::to_string(h.datatype));
  const std::size_t count = std::size_t(v.dims[0]) * v.dims[1] * v.dims[2];
  const long skip = long(h.vox_offset) - long(sizeof(h));
  if (skip < 0) throw DataError(path.string() + ": invalid vox_offset");
  std::vector<unsigned char> pad(std::size_t(skip) + 1);
  if (skip > 0 && gzread(f.get(), pad.data(), unsigned(skip)) != int(skip)) throw DataError(path.string() + ": truncated");
  std::vector<unsigned char> raw(count * tsize);
  if (gzread(f.get(), raw.data(), unsigned(raw.size())) != int(raw.size())) throw DataError(path.string() + ": truncated data");
  switch (h.datatype) {
    case kUint8: decode<std::uint8_t>(raw, swap, v.data); break;
    case kInt8: decode<std::int8_t>(raw, swap, v.data); break;
    case kInt16: decode<std::int16_t>(raw, swap, v.data); break;
    case kUint16: decode<std::uint16_t>(raw, swap, v.data); break;
    case kInt32: decode<std::int32_t>(raw, swap, v.data); break;
    case kUint32: decode<std::uint32_t>(raw, swap, v.data); break;
    case kFloat32: decode<float>(raw, swap, v.data); break;
    case kFloat64: decode<double>(raw, swap, v.data); break;
  }
  if (h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f)) {
    for (double& x : v.data) x = x * h.scl_slope + h.scl_inter;
  }
  return v;
}

void write_nifti(const fs::path& path, const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
                 const std::vector<float>& data) {
  if (data.size() != std::size_t(dims[0]) * dims[1] * dims[2]) throw std::invalid_argument("write_nifti: size mismatch");
  write_file(path, dims, pixdim, kFloat32, data.data(), data.size() * sizeof(float));
}

void write_nifti_labels(const fs::path& path, const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
                        const std::vector<std::int32_t>& data) {
  if (data.size() != std::size_t(dims[0]) * dims[1] * dims[2]) throw std::invalid_argument("write_nifti: size mismatch");
  write_file(path, dims, pixdim, kInt32, data.data(), data.size() * sizeof(std::int32_t));
}

}  // namespace advseg
