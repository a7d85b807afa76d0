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
#ifndef ADVSEG_TENSOR_HPP_
#define ADVSEG_TENSOR_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advseg {

using Index = Eigen::Index;

/// Dense single-channel 2D grid, row-major so that (row, col) matches image
/// conventions and the memory layout of one NCHW plane.
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Image = ImageT<float>;

using LabelGrid = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape of a batched NCHW tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  Index size() const { return Index(n) * c * h * w; }
  Index plane() const { return Index(h) * w; }
  Index sample() const { return Index(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
};

/// Owning NCHW tensor backed by a contiguous Eigen array.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Vector::Zero(shape.size())) {}
  Tensor(const Shape& shape, Scalar fill) : shape_(shape), data_(Vector::Constant(shape.size(), fill)) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector& array() { return data_; }
  const Vector& array() const { return data_; }

  std::span<Scalar> span() { return {data_.data(), std::size_t(data_.size())}; }
  std::span<const Scalar> span() const { return {data_.data(), std::size_t(data_.size())}; }

  Scalar& operator()(int n, int c, int y, int x) {
    return data_[((Index(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(int n, int c, int y, int x) const {
    return data_[((Index(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  Scalar* plane(int n, int c) { return data_.data() + (Index(n) * shape_.c + c) * shape_.plane(); }
  const Scalar* plane(int n, int c) const {
    return data_.data() + (Index(n) * shape_.c + c) * shape_.plane();
  }
  Scalar* sample(int n) { return data_.data() + Index(n) * shape_.sample(); }
  const Scalar* sample(int n) const { return data_.data() + Index(n) * shape_.sample(); }

  Eigen::Map<ImageT<Scalar>> plane_map(int n, int c) { return {plane(n, c), shape_.h, shape_.w}; }
  Eigen::Map<const ImageT<Scalar>> plane_map(int n, int c) const {
    return {plane(n, c), shape_.h, shape_.w};
  }

  void set_zero() { data_.setZero(); }

  Tensor reshaped(const Shape& shape) const {
    if (shape.size() != shape_.size()) {
      throw std::invalid_argument("reshape " + shape_.str() + " -> " + shape.str());
    }
    Tensor out = *this;
    out.shape_ = shape;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  Shape shape_;
  Vector data_;
};

/// Stacks equally-shaped images into an N x 1 x H x W tensor.
template <typename Scalar>
Tensor<Scalar> stack_images(std::span<const ImageT<Scalar>> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  const int h = int(images.front().rows());
  const int w = int(images.front().cols());
  Tensor<Scalar> out({int(images.size()), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows() != h || images[i].cols() != w) {
      throw std::invalid_argument("stack_images: shape mismatch");
    }
    out.plane_map(int(i), 0) = images[i];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> image_tensor(const ImageT<Scalar>& image) {
  return stack_images<Scalar>(std::span<const ImageT<Scalar>>(&image, 1));
}

template <typename Scalar>
ImageT<Scalar> plane_image(const Tensor<Scalar>& t, int n, int c) {
  return t.plane_map(n, c);
}

}  // namespace advseg

#endif  // ADVSEG_TENSOR_HPP_
