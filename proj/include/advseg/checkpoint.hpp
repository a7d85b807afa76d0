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
#ifndef ADVSEG_CHECKPOINT_HPP_
#define ADVSEG_CHECKPOINT_HPP_

#include <cstdio>
#include <string>

#include "advseg/layers.hpp"
#include "advseg/tensorio.hpp"

namespace advseg {

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <typename Scalar>
ArchiveArray to_array(const std::string& name, const Tensor<Scalar>& t) {
  const Shape s = t.shape();
  std::vector<float> values(std::size_t(t.size()));
  for (Index i = 0; i < t.size(); ++i) values[std::size_t(i)] = float(t.data()[i]);
  return {name, {s.n, s.c, s.h, s.w}, std::move(values)};
}

template <typename Scalar>
void from_array(const ArchiveArray& a, Tensor<Scalar>& t) {
  const Shape s = t.shape();
  if (a.shape != std::vector<std::int64_t>{s.n, s.c, s.h, s.w}) {
    throw DataError("checkpoint: array " + a.name + " has the wrong shape for " + s.str());
  }
  const auto& v = a.f32();
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(v[std::size_t(i)]);
}

/// Writes every parameter and running statistic of `net` to `dir`. `meta` is
/// extended with the state hash and the kind tag.
template <class Net>
void save_network(const fs::path& dir, const Net& net, const std::string& kind, nlohmann::json meta = {}) {
  Archive a;
  net.visit([&](const auto& p) { a.arrays.push_back(to_array(p.name, p.value)); });
  net.visit_buffers([&](const std::string& name, const auto& t) { a.arrays.push_back(to_array(name, t)); });
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["kind"] = kind;
  meta["state_hash"] = hash_hex(net.state_hash());
  a.meta = std::move(meta);
  write_archive(dir, a);
}

/// Restores `net` (already constructed with the matching architecture) from `dir`.
/// Returns the stored metadata.
template <class Net>
nlohmann::json load_network(const fs::path& dir, Net& net, const std::string& kind) {
  const Archive a = read_archive(dir);
  if (a.meta.value("kind", "") != kind) {
    throw DataError(dir.string() + ": expected a " + kind + " checkpoint, found '" + a.meta.value("kind", "") + "'");
  }
  std::size_t used = 0;
  net.visit([&](auto& p) {
    from_array(a.at(p.name), p.value);
    ++used;
  });
  net.visit_buffers([&](const std::string& name, auto& t) {
    from_array(a.at(name), t);
    ++used;
  });
  if (used != a.arrays.size()) throw DataError(dir.string() + ": checkpoint has arrays the model does not use");
  return a.meta;
}

}  // namespace advseg

#endif  // ADVSEG_CHECKPOINT_HPP_
