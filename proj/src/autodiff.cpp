// SPDX-License-Identifier: Apache-2.0
#include "kquant/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kquant/error.hpp"

namespace kquant {

TensorR conv2d_real_backward_input(const TensorR& grad_out, const TensorR& w, const ConvSpec& spec,
                                   const Shape4& input_shape) {
  const Shape4 os = conv_output_shape(input_shape, spec);
  if (!(grad_out.shape() == os)) throw ShapeError("conv backward: gradient shape mismatch");
  TensorR gx(input_shape);
  const std::int64_t H = input_shape.h, W = input_shape.w, K = spec.kernel;
  const std::int64_t S = spec.stride, P = spec.padding;
  for (std::int64_t n = 0; n < os.n; ++n) {
    for (std::int64_t o = 0; o < os.c; ++o) {
      const double* g = &grad_out.at(n, o, 0, 0);
      for (std::int64_t ci = 0; ci < spec.in_ch; ++ci) {
        double* in = &gx.at(n, ci, 0, 0);
        for (std::int64_t ky = 0; ky < K; ++ky) {
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const double wv = w.at(o, ci, ky, kx);
            std::int64_t lo = 0;
            while (lo < os.w && lo * S - P + kx < 0) ++lo;
            std::int64_t hi = os.w;
            while (hi > lo && (hi - 1) * S - P + kx >= W) --hi;
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
              const std::int64_t iy = oy * S - P + ky;
              if (iy < 0 || iy >= H) continue;
              double* row = in + iy * W;
              const double* grow = g + oy * os.w;
              for (std::int64_t ox = lo; ox < hi; ++ox) row[ox * S - P + kx] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return gx;
}

TensorR conv2d_real_backward_weight(const TensorR& grad_out, const TensorR& x, const ConvSpec& spec) {
  const Shape4 os = conv_output_shape(x.shape(), spec);
  if (!(grad_out.shape() == os)) throw ShapeError("conv backward: gradient shape mismatch");
  TensorR gw(spec.weight_shape());
  const std::int64_t H = x.shape().h, W = x.shape().w, K = spec.kernel;
  const std::int64_t S = spec.stride, P = spec.padding;
  for (std::int64_t n = 0; n < os.n; ++n) {
    for (std::int64_t o = 0; o < os.c; ++o) {
      const double* g = &grad_out.at(n, o, 0, 0);
      for (std::int64_t ci = 0; ci < spec.in_ch; ++ci) {
        const double* in = &x.at(n, ci, 0, 0);
        for (std::int64_t ky = 0; ky < K; ++ky) {
          for (std::int64_t kx = 0; kx < K; ++kx) {
            std::int64_t lo = 0;
            while (lo < os.w && lo * S - P + kx < 0) ++lo;
            std::int64_t hi = os.w;
            while (hi > lo && (hi - 1) * S - P + kx >= W) --hi;
            double acc = 0.0;
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
              const std::int64_t iy = oy * S - P + ky;
              if (iy < 0 || iy >= H) continue;
              const double* row = in + iy * W;
              const double* grow = g + oy * os.w;
              for (std::int64_t ox = lo; ox < hi; ++ox) acc += grow[ox] * row[ox * S - P + kx];
            }
            gw.at(o, ci, ky, kx) += acc;
          }
        }
      }
    }
  }
  return gw;
}

TensorR linear_real_backward_input(const TensorR& grad_out, const TensorR& w, const Shape4& input_shape) {
  const std::int64_t N = input_shape.n, in = input_shape.per_sample(), O = w.shape().n;
  if (grad_out.shape().n != N || grad_out.shape().per_sample() != O) {
    throw ShapeError("linear backward: gradient shape mismatch");
  }
  TensorR gx(input_shape);
  for (std::int64_t n = 0; n < N; ++n) {
    double* gr = gx.data().data() + n * in;
    for (std::int64_t o = 0; o < O; ++o) {
      const double g = grad_out[static_cast<std::size_t>(n * O + o)];
      const double* wr = w.data().data() + o * in;
      for (std::int64_t i = 0; i < in; ++i) gr[i] += g * wr[i];
    }
  }
  return gx;
}

TensorR linear_real_backward_weight(const TensorR& grad_out, const TensorR& x) {
  const std::int64_t N = x.shape().n, in = x.shape().per_sample(), O = grad_out.shape().per_sample();
  TensorR gw(Shape4{O, in, 1, 1});
  for (std::int64_t n = 0; n < N; ++n) {
    const double* xr = x.data().data() + n * in;
    for (std::int64_t o = 0; o < O; ++o) {
      const double g = grad_out[static_cast<std::size_t>(n * O + o)];
      double* wr = gw.data().data() + o * in;
      for (std::int64_t i = 0; i < in; ++i) wr[i] += g * xr[i];
    }
  }
  return gw;
}

TensorR maxpool2d_argmax(const TensorR& x, std::int64_t window, std::int64_t stride,
                         std::vector<std::uint32_t>& argmax) {
  const Shape4 os = pool_output_shape(x.shape(), window, stride);
  TensorR out(os);
  argmax.assign(out.size(), 0);
  std::size_t k = 0;
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t oy = 0; oy < os.h; ++oy)
        for (std::int64_t ox = 0; ox < os.w; ++ox, ++k) {
          std::size_t best = x.offset(n, c, oy * stride, ox * stride);
          for (std::int64_t ky = 0; ky < window; ++ky)
            for (std::int64_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = x.offset(n, c, oy * stride + ky, ox * stride + kx);
              if (x[idx] > x[best]) best = idx;
            }
          out[k] = x[best];
          argmax[k] = static_cast<std::uint32_t>(best);
        }
  return out;
}

TensorR maxpool2d_backward(const TensorR& grad_out, std::span<const std::uint32_t> argmax,
                           const Shape4& input_shape) {
  if (grad_out.size() != argmax.size()) throw ShapeError("maxpool backward: size mismatch");
  TensorR gx(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) gx[argmax[k]] += grad_out[k];
  return gx;
}

LossResult softmax_cross_entropy(const TensorR& logits, std::span<const std::int32_t> labels,
                                 double scale) {
  const std::int64_t N = logits.shape().n, C = logits.shape().per_sample();
  if (static_cast<std::int64_t>(labels.size()) != N) throw ShapeError("label count mismatch");
  LossResult r;
  r.grad = TensorR(logits.shape());
  std::vector<double> p(static_cast<std::size_t>(C));
  for (std::int64_t n = 0; n < N; ++n) {
    const double* z = logits.data().data() + n * C;
    const std::int32_t y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= C) throw ShapeError("label out of range");
    double zmax = z[0];
    std::int64_t arg = 0;
    for (std::int64_t c = 1; c < C; ++c) {
      if (z[c] > zmax) {
        zmax = z[c];
        arg = c;
      }
    }
    if (arg == y) ++r.correct;
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      p[static_cast<std::size_t>(c)] = std::exp(scale * (z[c] - zmax));
      sum += p[static_cast<std::size_t>(c)];
    }
    r.loss += std::log(sum) - scale * (z[y] - zmax);
    double* g = r.grad.data().data() + n * C;
    for (std::int64_t c = 0; c < C; ++c) {
      const double pc = p[static_cast<std::size_t>(c)] / sum;
      g[c] = scale * (pc - (c == y ? 1.0 : 0.0)) / static_cast<double>(N);
    }
  }
  r.loss /= static_cast<double>(N);
  return r;
}

}  // namespace kquant
