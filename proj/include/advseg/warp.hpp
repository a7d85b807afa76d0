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
#ifndef ADVSEG_WARP_HPP_
#define ADVSEG_WARP_HPP_

// Pull warping with bilinear interpolation and clamp-to-edge borders:
//   out(r, c) = img(clamp(r + dy(r, c)), clamp(c + dx(r, c)))
// Displacements are in pixels.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "advseg/ops.hpp"

namespace advseg {

template <typename Scalar>
struct DeformationFieldT {
  ImageT<Scalar> dx;  ///< horizontal displacement (columns)
  ImageT<Scalar> dy;  ///< vertical displacement (rows)

  static DeformationFieldT zeros(Index rows, Index cols) {
    return {ImageT<Scalar>::Zero(rows, cols), ImageT<Scalar>::Zero(rows, cols)};
  }
  Index rows() const { return dx.rows(); }
  Index cols() const { return dx.cols(); }
};
using DeformationField = DeformationFieldT<float>;

namespace detail {

// One bilinear lookup: four source offsets, fractional weights, and whether the
// clamp is inactive along each axis (the coordinate derivative is zero otherwise).
template <typename Scalar>
struct BilinearTap {
  Index i00, i01, i10, i11;
  Scalar wy, wx;
  bool live_y, live_x;
};

template <typename Scalar>
BilinearTap<Scalar> bilinear_tap(Scalar sy, Scalar sx, int h, int w) {
  BilinearTap<Scalar> t{};
  const Scalar ymax = Scalar(h - 1);
  const Scalar xmax = Scalar(w - 1);
  t.live_y = sy > 0 && sy < ymax;
  t.live_x = sx > 0 && sx < xmax;
  sy = std::clamp(sy, Scalar(0), ymax);
  sx = std::clamp(sx, Scalar(0), xmax);
  // NaN coordinates read pixel 0 with NaN weights, so the NaN reaches the output.
  const int y0 = std::isnan(sy) ? 0 : std::min(int(std::floor(sy)), h - 1);
  const int x0 = std::isnan(sx) ? 0 : std::min(int(std::floor(sx)), w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  t.wy = sy - Scalar(y0);
  t.wx = sx - Scalar(x0);
  t.i00 = Index(y0) * w + x0;
  t.i01 = Index(y0) * w + x1;
  t.i10 = Index(y1) * w + x0;
  t.i11 = Index(y1) * w + x1;
  return t;
}

template <typename Scalar>
Scalar bilinear_value(const BilinearTap<Scalar>& t, const Scalar* img) {
  return (1 - t.wy) * ((1 - t.wx) * img[t.i00] + t.wx * img[t.i01]) +
         t.wy * ((1 - t.wx) * img[t.i10] + t.wx * img[t.i11]);
}

}  // namespace detail

/// Warps `img` by `d`. Throws std::invalid_argument on shape mismatch.
template <typename Scalar>
ImageT<Scalar> apply_deformation(const ImageT<Scalar>& img, const DeformationFieldT<Scalar>& d) {
  if (d.dx.rows() != img.rows() || d.dx.cols() != img.cols() || d.dy.rows() != img.rows() ||
      d.dy.cols() != img.cols()) {
    throw std::invalid_argument("apply_deformation: shape mismatch");
  }
  const int h = int(img.rows());
  const int w = int(img.cols());
  ImageT<Scalar> out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto tap = detail::bilinear_tap<Scalar>(Scalar(r) + d.dy(r, c), Scalar(c) + d.dx(r, c), h, w);
      out(r, c) = detail::bilinear_value(tap, img.data());
    }
  }
  return out;
}

/// Tape op: img is N x 1 x H x W, field is N x 2 x H x W with channel 0 = dx and 1 = dy.
template <typename Scalar>
Var<Scalar> warp(const Var<Scalar>& img, const Var<Scalar>& field) {
  const Shape s = img.shape();
  const Shape fs = field.shape();
  detail::require(s.c == 1, "warp: image must have one channel");
  detail::require(fs.n == s.n && fs.c == 2 && fs.h == s.h && fs.w == s.w, "warp: shape mismatch");
  Graph<Scalar>& g = *img.graph();
  Tensor<Scalar> out(s);
  for (int n = 0; n < s.n; ++n) {
    const Scalar* src = img.value().plane(n, 0);
    const Scalar* dx = field.value().plane(n, 0);
    const Scalar* dy = field.value().plane(n, 1);
    Scalar* dst = out.plane(n, 0);
    for (int r = 0; r < s.h; ++r) {
      for (int c = 0; c < s.w; ++c) {
        const Index i = Index(r) * s.w + c;
        dst[i] = detail::bilinear_value(detail::bilinear_tap<Scalar>(Scalar(r) + dy[i], Scalar(c) + dx[i], s.h, s.w), src);
      }
    }
  }
  return g.record(std::move(out), {img, field}, [&g, img, field](const Tensor<Scalar>& go) {
    const Shape s = img.shape();
    const bool need_img = g.needs_grad(img);
    const bool need_field = g.needs_grad(field);
    for (int n = 0; n < s.n; ++n) {
      const Scalar* src = img.value().plane(n, 0);
      const Scalar* dx = field.value().plane(n, 0);
      const Scalar* dy = field.value().plane(n, 1);
      const Scalar* gout = go.plane(n, 0);
      Scalar* gimg = need_img ? g.grad_buffer(img).plane(n, 0) : nullptr;
      Scalar* gdx = need_field ? g.grad_buffer(field).plane(n, 0) : nullptr;
      Scalar* gdy = need_field ? g.grad_buffer(field).plane(n, 1) : nullptr;
      for (int r = 0; r < s.h; ++r) {
        for (int c = 0; c < s.w; ++c) {
          const Index i = Index(r) * s.w + c;
          const auto t = detail::bilinear_tap<Scalar>(Scalar(r) + dy[i], Scalar(c) + dx[i], s.h, s.w);
          const Scalar go_i = gout[i];
          if (gimg) {
            gimg[t.i00] += go_i * (1 - t.wy) * (1 - t.wx);
            gimg[t.i01] += go_i * (1 - t.wy) * t.wx;
            gimg[t.i10] += go_i * t.wy * (1 - t.wx);
            gimg[t.i11] += go_i * t.wy * t.wx;
          }
          if (gdx) {
            if (t.live_x) {
              gdx[i] += go_i * ((1 - t.wy) * (src[t.i01] - src[t.i00]) + t.wy * (src[t.i11] - src[t.i10]));
            }
            if (t.live_y) {
              gdy[i] += go_i * ((1 - t.wx) * (src[t.i10] - src[t.i00]) + t.wx * (src[t.i11] - src[t.i01]));
            }
          }
        }
      }
    }
  });
}

/// Packs a field into the 1 x 2 x H x W layout used by warp().
template <typename Scalar>
Tensor<Scalar> field_tensor(const DeformationFieldT<Scalar>& d) {
  Tensor<Scalar> t({1, 2, int(d.dx.rows()), int(d.dx.cols())});
  t.plane_map(0, 0) = d.dx;
  t.plane_map(0, 1) = d.dy;
  return t;
}

template <typename Scalar>
DeformationFieldT<Scalar> field_from_tensor(const Tensor<Scalar>& t, int n) {
  return {t.plane_map(n, 0), t.plane_map(n, 1)};
}

/// Compares the analytic gradient of the probe loss sum(w .* warp(img, d)) with
/// respect to d against central differences of step `eps`; returns the largest
/// relative error |a - f| / max(|a|, |f|, 1e-8) over all field entries.
/// Callers keep every sample coordinate at least eps away from integers.
template <typename Scalar>
Scalar warp_jacobian_check(const ImageT<Scalar>& img, const DeformationFieldT<Scalar>& d, Scalar eps) {
  if (!(eps > 0)) throw std::invalid_argument("warp_jacobian_check: eps must be positive");
  const Index h = img.rows();
  const Index w = img.cols();
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageT<Scalar> probe(h, w);
  for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = Scalar(u(rng));

  Graph<Scalar> g;
  auto x = g.constant(image_tensor(img));
  auto f = g.variable(field_tensor(d));
  auto y = warp(x, f);
  Tensor<Scalar> weights = image_tensor(probe);
  auto loss = g.record(Tensor<Scalar>({1, 1, 1, 1}, (y.value().array() * weights.array()).sum()), {y},
                       [&g, y, weights](const Tensor<Scalar>& go) {
                         g.grad_buffer(y).array() += weights.array() * go.array()[0];
                       });
  g.backward(loss);
  const Tensor<Scalar> analytic = g.grad(f);

  auto probe_loss = [&](const DeformationFieldT<Scalar>& dd) {
    return (apply_deformation(img, dd) * probe).sum();
  };
  Scalar worst = 0;
  for (int ch = 0; ch < 2; ++ch) {
    for (Index i = 0; i < h * w; ++i) {
      DeformationFieldT<Scalar> plus = d;
      DeformationFieldT<Scalar> minus = d;
      (ch == 0 ? plus.dx : plus.dy).data()[i] += eps;
      (ch == 0 ? minus.dx : minus.dy).data()[i] -= eps;
      const Scalar fd = (probe_loss(plus) - probe_loss(minus)) / (2 * eps);
      const Scalar an = analytic.plane(0, ch)[i];
      const Scalar denom = std::max({std::abs(an), std::abs(fd), Scalar(1e-8)});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
  }
  return worst;
}

}  // namespace advseg

#endif  // ADVSEG_WARP_HPP_
