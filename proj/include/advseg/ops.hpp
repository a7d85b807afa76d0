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
#ifndef ADVSEG_OPS_HPP_
#define ADVSEG_OPS_HPP_

// Differentiable tensor ops recorded on a Graph. All tensors are NCHW.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "advseg/autograd.hpp"

namespace advseg {

namespace detail {

inline void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Unfolds one sample (C x H x W) into a (C*k*k) x (Ho*Wo) row-major matrix.
template <typename Scalar>
void im2col(const Scalar* src, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            Scalar* col) {
  for (int ci = 0; ci < c; ++ci) {
    const Scalar* plane = src + Index(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col + (Index(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* dst = row + Index(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, Scalar(0));
            continue;
          }
          const Scalar* srow = plane + Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            Scalar* dst) {
  for (int ci = 0; ci < c; ++ci) {
    Scalar* plane = dst + Index(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col + (Index(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Scalar* drow = plane + Index(iy) * w;
          const Scalar* srow = row + Index(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Graph<Scalar>& g = *a.graph();
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<Scalar>& go) {
    if (g.needs_grad(a)) g.grad_buffer(a).array() += go.array();
    if (g.needs_grad(b)) g.grad_buffer(b).array() += go.array();
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Graph<Scalar>& g = *a.graph();
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<Scalar>& go) {
    if (g.needs_grad(a)) g.grad_buffer(a).array() += go.array();
    if (g.needs_grad(b)) g.grad_buffer(b).array() -= go.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Graph<Scalar>& g = *a.graph();
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * s;
  return g.record(std::move(out), {a}, [&g, a, s](const Tensor<Scalar>& go) {
    g.grad_buffer(a).array() += go.array() * s;
  });
}

/// Mean of all elements as a 1x1x1x1 tensor.
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  Graph<Scalar>& g = *a.graph();
  const Index n = a.value().size();
  Tensor<Scalar> out({1, 1, 1, 1}, a.value().array().sum() / Scalar(n));
  return g.record(std::move(out), {a}, [&g, a, n](const Tensor<Scalar>& go) {
    g.grad_buffer(a).array() += go.array()[0] / Scalar(n);
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, const Shape& shape) {
  Graph<Scalar>& g = *a.graph();
  return g.record(a.value().reshaped(shape), {a}, [&g, a](const Tensor<Scalar>& go) {
    g.grad_buffer(a).array() += go.array();
  });
}

/// 2D convolution (cross-correlation). weight: Cout x Cin x k x k; bias optional, 1 x Cout x 1 x 1.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, int stride,
                   int pad) {
  Graph<Scalar>& g = *x.graph();
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  detail::require(ws.c == xs.c, "conv2d: input channel mismatch");
  detail::require(ws.h == ws.w, "conv2d: kernel must be square");
  const int k = ws.h;
  const int ho = detail::conv_out(xs.h, k, stride, pad);
  const int wo = detail::conv_out(xs.w, k, stride, pad);
  detail::require(ho > 0 && wo > 0, "conv2d: output would be empty");
  const Index kk = Index(xs.c) * k * k;
  const Index p = Index(ho) * wo;

  Tensor<Scalar> out({xs.n, ws.n, ho, wo});
  Eigen::Map<const RowMatrix<Scalar>> wm(weight.value().data(), ws.n, kk);
  RowMatrix<Scalar> col(kk, p);
  for (int n = 0; n < xs.n; ++n) {
    detail::im2col(x.value().sample(n), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
    Eigen::Map<RowMatrix<Scalar>> om(out.sample(n), ws.n, p);
    om.noalias() = wm * col;
    if (bias.valid()) {
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bv(bias.value().data(), ws.n);
      om.colwise() += bv;
    }
  }
  return g.record(std::move(out), {x, weight, bias},
                  [&g, x, weight, bias, stride, pad, k, ho, wo, kk, p](const Tensor<Scalar>& go) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    Eigen::Map<const RowMatrix<Scalar>> wm(weight.value().data(), ws.n, kk);
    RowMatrix<Scalar> col(kk, p);
    const bool need_w = g.needs_grad(weight);
    const bool need_x = g.needs_grad(x);
    const bool need_b = bias.valid() && g.needs_grad(bias);
    for (int n = 0; n < xs.n; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> gm(go.sample(n), ws.n, p);
      if (need_w) {
        detail::im2col(x.value().sample(n), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
        Eigen::Map<RowMatrix<Scalar>> gw(g.grad_buffer(weight).data(), ws.n, kk);
        gw.noalias() += gm * col.transpose();
      }
      if (need_b) {
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(g.grad_buffer(bias).data(), ws.n);
        gb += gm.rowwise().sum();
      }
      if (need_x) {
        col.noalias() = wm.transpose() * gm;
        detail::col2im(col.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                       g.grad_buffer(x).sample(n));
      }
    }
  });
}

/// Fully connected layer over the flattened per-sample features.
/// weight: Out x F (stored as Out x F x 1 x 1); bias: 1 x Out x 1 x 1. Output N x Out x 1 x 1.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  Graph<Scalar>& g = *x.graph();
  const int n = x.shape().n;
  const Index f = x.shape().sample();
  const int outf = weight.shape().n;
  detail::require(weight.shape().sample() == f, "linear: feature size mismatch");
  Tensor<Scalar> out({n, outf, 1, 1});
  Eigen::Map<const RowMatrix<Scalar>> xm(x.value().data(), n, f);
  Eigen::Map<const RowMatrix<Scalar>> wm(weight.value().data(), outf, f);
  Eigen::Map<RowMatrix<Scalar>> om(out.data(), n, outf);
  om.noalias() = xm * wm.transpose();
  if (bias.valid()) {
    Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bv(bias.value().data(), outf);
    om.rowwise() += bv;
  }
  return g.record(std::move(out), {x, weight, bias}, [&g, x, weight, bias, n, f, outf](const Tensor<Scalar>& go) {
    Eigen::Map<const RowMatrix<Scalar>> gm(go.data(), n, outf);
    Eigen::Map<const RowMatrix<Scalar>> xm(x.value().data(), n, f);
    Eigen::Map<const RowMatrix<Scalar>> wm(weight.value().data(), outf, f);
    if (g.needs_grad(weight)) {
      Eigen::Map<RowMatrix<Scalar>> gw(g.grad_buffer(weight).data(), outf, f);
      gw.noalias() += gm.transpose() * xm;
    }
    if (bias.valid() && g.needs_grad(bias)) {
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gb(g.grad_buffer(bias).data(), outf);
      gb += gm.colwise().sum();
    }
    if (g.needs_grad(x)) {
      Eigen::Map<RowMatrix<Scalar>> gx(g.grad_buffer(x).data(), n, f);
      gx.noalias() += gm * wm;
    }
  });
}

/// Running statistics of a batch normalization layer.
template <typename Scalar>
struct NormStats {
  Tensor<Scalar> mean;
  Tensor<Scalar> var;
};

/// Per-channel batch normalization. In training mode normalizes with batch
/// statistics (biased variance) and, if mode.update_stats, folds them into
/// `stats` with the given momentum; otherwise uses `stats`.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       NormStats<Scalar>& stats, const ForwardMode& mode, Scalar momentum = Scalar(0.1),
                       Scalar eps = Scalar(1e-5)) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  const Index plane = s.plane();
  const Index m = Index(s.n) * plane;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mu(s.c), inv_std(s.c);
  if (mode.training) {
    for (int c = 0; c < s.c; ++c) {
      Scalar sum = 0, sq = 0;
      for (int n = 0; n < s.n; ++n) {
        auto pm = x.value().plane_map(n, c);
        sum += pm.sum();
      }
      mu[c] = sum / Scalar(m);
      for (int n = 0; n < s.n; ++n) sq += (x.value().plane_map(n, c) - mu[c]).square().sum();
      const Scalar var = sq / Scalar(m);
      inv_std[c] = Scalar(1) / std::sqrt(var + eps);
      if (mode.update_stats) {
        stats.mean.data()[c] = (1 - momentum) * stats.mean.data()[c] + momentum * mu[c];
        stats.var.data()[c] = (1 - momentum) * stats.var.data()[c] + momentum * var;
      }
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mu[c] = stats.mean.data()[c];
      inv_std[c] = Scalar(1) / std::sqrt(stats.var.data()[c] + eps);
    }
  }
  Tensor<Scalar> xhat(s);
  Tensor<Scalar> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      xhat.plane_map(n, c) = (x.value().plane_map(n, c) - mu[c]) * inv_std[c];
      out.plane_map(n, c) = xhat.plane_map(n, c) * gamma.value().data()[c] + beta.value().data()[c];
    }
  }
  const bool batch_stats = mode.training;
  return g.record(std::move(out), {x, gamma, beta},
                  [&g, x, gamma, beta, xhat = std::move(xhat), inv_std, m, batch_stats](const Tensor<Scalar>& go) {
    const Shape s = x.shape();
    for (int c = 0; c < s.c; ++c) {
      Scalar sum_g = 0, sum_gx = 0;
      for (int n = 0; n < s.n; ++n) {
        sum_g += go.plane_map(n, c).sum();
        sum_gx += (go.plane_map(n, c) * xhat.plane_map(n, c)).sum();
      }
      if (g.needs_grad(gamma)) g.grad_buffer(gamma).data()[c] += sum_gx;
      if (g.needs_grad(beta)) g.grad_buffer(beta).data()[c] += sum_g;
      if (!g.needs_grad(x)) continue;
      const Scalar gm = gamma.value().data()[c];
      Tensor<Scalar>& gx = g.grad_buffer(x);
      for (int n = 0; n < s.n; ++n) {
        if (batch_stats) {
          gx.plane_map(n, c) += gm * inv_std[c] / Scalar(m) *
                                (Scalar(m) * go.plane_map(n, c) - sum_g - xhat.plane_map(n, c) * sum_gx);
        } else {
          gx.plane_map(n, c) += gm * inv_std[c] * go.plane_map(n, c);
        }
      }
    }
  });
}

/// Leaky rectifier; slope 0 gives the standard rectifier.
template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope) {
  Graph<Scalar>& g = *x.graph();
  Tensor<Scalar> out(x.shape());
  out.array() = (x.value().array() > 0).select(x.value().array(), x.value().array() * slope);
  return g.record(std::move(out), {x}, [&g, x, slope](const Tensor<Scalar>& go) {
    g.grad_buffer(x).array() += (x.value().array() > 0).select(go.array(), go.array() * slope);
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return leaky_relu(x, Scalar(0));
}

/// bound * tanh(x): squashes each element into [-bound, bound].
template <typename Scalar>
Var<Scalar> scaled_tanh(const Var<Scalar>& x, Scalar bound) {
  Graph<Scalar>& g = *x.graph();
  Tensor<Scalar> t(x.shape());
  t.array() = x.value().array().tanh();
  Tensor<Scalar> out(x.shape());
  out.array() = t.array() * bound;
  return g.record(std::move(out), {x}, [&g, x, bound, t = std::move(t)](const Tensor<Scalar>& go) {
    g.grad_buffer(x).array() += go.array() * bound * (Scalar(1) - t.array().square());
  });
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in scan order.
template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  detail::require(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2: odd spatial size");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<Scalar> out(os);
  std::vector<Index> arg(std::size_t(os.size()));
  Index o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar* src = x.value().plane(n, c);
      const Index base = (Index(n) * s.c + c) * s.plane();
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx, ++o) {
          Index best = Index(2 * y) * s.w + 2 * xx;
          for (Index cand : {best + 1, best + s.w, best + s.w + 1}) {
            if (src[cand] > src[best]) best = cand;
          }
          out.data()[o] = src[best];
          arg[std::size_t(o)] = base + best;
        }
      }
    }
  }
  return g.record(std::move(out), {x}, [&g, x, arg = std::move(arg)](const Tensor<Scalar>& go) {
    Scalar* gx = g.grad_buffer(x).data();
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += go.data()[i];
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
Var<Scalar> upsample2(const Var<Scalar>& x) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  Tensor<Scalar> out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      auto src = x.value().plane_map(n, c);
      auto dst = out.plane_map(n, c);
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) dst(y, xx) = src(y / 2, xx / 2);
    }
  return g.record(std::move(out), {x}, [&g, x](const Tensor<Scalar>& go) {
    const Shape s = x.shape();
    Tensor<Scalar>& gx = g.grad_buffer(x);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        auto src = go.plane_map(n, c);
        auto dst = gx.plane_map(n, c);
        for (int y = 0; y < 2 * s.h; ++y)
          for (int xx = 0; xx < 2 * s.w; ++xx) dst(y / 2, xx / 2) += src(y, xx);
      }
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = *a.graph();
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  detail::require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat_channels: shape mismatch");
  Tensor<Scalar> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().sample(n), sa.sample(), out.sample(n));
    std::copy_n(b.value().sample(n), sb.sample(), out.sample(n) + sa.sample());
  }
  return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<Scalar>& go) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    for (int n = 0; n < sa.n; ++n) {
      const Scalar* src = go.sample(n);
      if (g.needs_grad(a)) {
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(g.grad_buffer(a).sample(n), sa.sample()) +=
            Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(src, sa.sample());
      }
      if (g.needs_grad(b)) {
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(g.grad_buffer(b).sample(n), sb.sample()) +=
            Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(src + sa.sample(), sb.sample());
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, int start, int count) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  detail::require(start >= 0 && count > 0 && start + count <= s.c, "slice_channels: out of range");
  Tensor<Scalar> out({s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n) std::copy_n(x.value().plane(n, start), Index(count) * s.plane(), out.sample(n));
  return g.record(std::move(out), {x}, [&g, x, start, count](const Tensor<Scalar>& go) {
    const Shape s = x.shape();
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(g.grad_buffer(x).plane(n, start), Index(count) * s.plane()) +=
          Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(go.sample(n), Index(count) * s.plane());
    }
  });
}

/// Softmax across channels at every pixel.
template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& x) {
  Graph<Scalar>& g = *x.graph();
  const Shape s = x.shape();
  Tensor<Scalar> out(s);
  const Index plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> xm(x.value().sample(n), s.c, plane);
    Eigen::Map<RowMatrix<Scalar>> om(out.sample(n), s.c, plane);
    om = (xm.rowwise() - xm.colwise().maxCoeff()).array().exp().matrix();
    om.array().rowwise() /= om.colwise().sum().array();
  }
  return g.record(out, {x}, [&g, x, y = out](const Tensor<Scalar>& go) {
    const Shape s = x.shape();
    const Index plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> ym(y.sample(n), s.c, plane);
      Eigen::Map<const RowMatrix<Scalar>> gm(go.sample(n), s.c, plane);
      Eigen::Map<RowMatrix<Scalar>> gx(g.grad_buffer(x).sample(n), s.c, plane);
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> dot = (ym.array() * gm.array()).colwise().sum();
      gx.array() += ym.array() * (gm.array().rowwise() - dot);
    }
  });
}

/// z = mu + exp(log_var / 2) * noise, with noise held constant.
template <typename Scalar>
Var<Scalar> reparameterize(const Var<Scalar>& mu, const Var<Scalar>& log_var, const Tensor<Scalar>& noise) {
  detail::require(mu.shape() == log_var.shape() && mu.shape() == noise.shape(),
                  "reparameterize: shape mismatch");
  Graph<Scalar>& g = *mu.graph();
  Tensor<Scalar> sigma(mu.shape());
  sigma.array() = (log_var.value().array() * Scalar(0.5)).exp();
  Tensor<Scalar> out(mu.shape());
  out.array() = mu.value().array() + sigma.array() * noise.array();
  return g.record(std::move(out), {mu, log_var},
                  [&g, mu, log_var, noise, sigma = std::move(sigma)](const Tensor<Scalar>& go) {
    if (g.needs_grad(mu)) g.grad_buffer(mu).array() += go.array();
    if (g.needs_grad(log_var)) {
      g.grad_buffer(log_var).array() += go.array() * noise.array() * sigma.array() * Scalar(0.5);
    }
  });
}

}  // namespace advseg

#endif  // ADVSEG_OPS_HPP_
