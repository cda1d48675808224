// SPDX-License-Identifier: Apache-2.0
#include "kquant/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kquant {
namespace {

constexpr std::int64_t kAccumulatorLimit = std::int64_t{1} << 62;

void require_shape(const Shape4& s, const char* what) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError(std::string(what) + " has a non-positive dimension: " + to_string(s));
  }
}

// Worst-case |sum| for `taps` products of magnitudes bounded by xa and wa.
void check_mac_bound(std::int64_t xa, std::int64_t wa, std::int64_t taps) {
  std::int64_t bound = 0;
  if (__builtin_mul_overflow(xa, wa, &bound) || __builtin_mul_overflow(bound, taps, &bound) ||
      bound >= kAccumulatorLimit) {
    throw OverflowError("worst-case accumulator bound " + std::to_string(xa) + "*" +
                        std::to_string(wa) + "*" + std::to_string(taps) +
                        " reaches 2^62");
  }
}

// Output[n,o,oy,ox] = sum over (ci, ky, kx) in that order. The loop nest
// broadcasts one weight over an output plane, which keeps the per-output
// accumulation order fixed.
template <class T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  validate(spec);
  require_shape(x.shape(), "conv input");
  if (x.shape().c != spec.in_ch) {
    throw ShapeError("conv input has " + std::to_string(x.shape().c) + " channels, spec expects " +
                     std::to_string(spec.in_ch));
  }
  if (!(w.shape() == spec.weight_shape())) {
    throw ShapeError("conv weight shape " + to_string(w.shape()) + " does not match spec " +
                     to_string(spec.weight_shape()));
  }
  const Shape4 os = conv_output_shape(x.shape(), spec);
  Tensor<T> out(os);
  const std::int64_t H = x.shape().h, W = x.shape().w, K = spec.kernel;
  const std::int64_t S = spec.stride, P = spec.padding;

  for (std::int64_t n = 0; n < os.n; ++n) {
    for (std::int64_t o = 0; o < os.c; ++o) {
      T* plane = &out.at(n, o, 0, 0);
      for (std::int64_t ci = 0; ci < spec.in_ch; ++ci) {
        const T* in = &x.at(n, ci, 0, 0);
        for (std::int64_t ky = 0; ky < K; ++ky) {
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const T wv = w.at(o, ci, ky, kx);
            // ox range with 0 <= ox*S - P + kx < W
            std::int64_t ox_lo = 0;
            while (ox_lo < os.w && ox_lo * S - P + kx < 0) ++ox_lo;
            std::int64_t ox_hi = os.w;
            while (ox_hi > ox_lo && (ox_hi - 1) * S - P + kx >= W) --ox_hi;
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
              const std::int64_t iy = oy * S - P + ky;
              if (iy < 0 || iy >= H) continue;
              const T* row = in + iy * W;
              T* orow = plane + oy * os.w;
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                orow[ox] += wv * row[ox * S - P + kx];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> linear_impl(const Tensor<T>& x, const Tensor<T>& w) {
  require_shape(x.shape(), "linear input");
  const std::int64_t in = x.shape().per_sample();
  if (w.shape().c != in || w.shape().h != 1 || w.shape().w != 1) {
    throw ShapeError("linear weight shape " + to_string(w.shape()) + " does not match " +
                     std::to_string(in) + " input features");
  }
  const std::int64_t N = x.shape().n, O = w.shape().n;
  Tensor<T> out(Shape4{N, O, 1, 1});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* xr = x.data().data() + n * in;
    for (std::int64_t o = 0; o < O; ++o) {
      const T* wr = w.data().data() + o * in;
      T acc{};
      for (std::int64_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      out.at(n, o, 0, 0) = acc;
    }
  }
  return out;
}

template <class T>
Tensor<T> maxpool_impl(const Tensor<T>& x, std::int64_t window, std::int64_t stride) {
  const Shape4 os = pool_output_shape(x.shape(), window, stride);
  Tensor<T> out(os);
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t oy = 0; oy < os.h; ++oy)
        for (std::int64_t ox = 0; ox < os.w; ++ox) {
          T best = x.at(n, c, oy * stride, ox * stride);
          for (std::int64_t ky = 0; ky < window; ++ky)
            for (std::int64_t kx = 0; kx < window; ++kx)
              best = std::max(best, x.at(n, c, oy * stride + ky, ox * stride + kx));
          out.at(n, c, oy, ox) = best;
        }
  return out;
}

}  // namespace

std::string to_string(const Shape4& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

template <class T>
Tensor<T>::Tensor(Shape4 shape, T fill) : shape_(shape) {
  require_shape(shape, "tensor");
  data_.assign(static_cast<std::size_t>(shape.size()), fill);
}

template <class T>
Tensor<T>::Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  require_shape(shape, "tensor");
  if (static_cast<std::int64_t>(data_.size()) != shape.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape));
  }
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : data_) {
      if (!std::isfinite(v)) throw DomainError("tensor data must be finite");
    }
  }
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape4 shape) const {
  if (shape.size() != shape_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor<T> out = *this;
  out.shape_ = shape;
  return out;
}

template class Tensor<double>;
template class Tensor<std::int64_t>;

void validate(const ConvSpec& spec) {
  if (spec.out_ch < 1 || spec.in_ch < 1) throw ShapeError("conv channel counts must be >= 1");
  if (spec.kernel < 1 || spec.kernel % 2 == 0) throw ShapeError("conv kernel must be odd");
  if (spec.stride < 1) throw ShapeError("conv stride must be >= 1");
  if (spec.padding < 0) throw ShapeError("conv padding must be >= 0");
}

Shape4 conv_output_shape(const Shape4& input, const ConvSpec& spec) {
  validate(spec);
  const std::int64_t h = (input.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
  const std::int64_t w = (input.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
  if (input.h + 2 * spec.padding < spec.kernel || input.w + 2 * spec.padding < spec.kernel) {
    throw ShapeError("conv kernel larger than padded input " + to_string(input));
  }
  return {input.n, spec.out_ch, h, w};
}

Shape4 pool_output_shape(const Shape4& input, std::int64_t window, std::int64_t stride) {
  if (window < 1 || stride < 1) throw ShapeError("pool window and stride must be >= 1");
  if (input.h < window || input.w < window || (input.h - window) % stride != 0 ||
      (input.w - window) % stride != 0) {
    throw ShapeError("pool window " + std::to_string(window) + "/" + std::to_string(stride) +
                     " does not tile input " + to_string(input));
  }
  return {input.n, input.c, (input.h - window) / stride + 1, (input.w - window) / stride + 1};
}

std::int64_t max_abs(const TensorI& t) {
  std::int64_t m = 0;
  for (std::int64_t v : t.data()) {
    if (v == std::numeric_limits<std::int64_t>::min()) {
      throw OverflowError("tensor holds INT64_MIN");
    }
    m = std::max(m, v < 0 ? -v : v);
  }
  return m;
}

double max_abs(const TensorR& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::fabs(v));
  return m;
}

TensorI conv2d_int(const TensorI& x, const TensorI& w, const ConvSpec& spec) {
  validate(spec);
  check_mac_bound(max_abs(x), max_abs(w), spec.fan_in());
  return conv2d_impl(x, w, spec);
}

TensorR conv2d_real(const TensorR& x, const TensorR& w, const ConvSpec& spec) {
  return conv2d_impl(x, w, spec);
}

TensorI linear_int(const TensorI& x, const TensorI& w) {
  check_mac_bound(max_abs(x), max_abs(w), x.shape().per_sample());
  return linear_impl(x, w);
}

TensorR linear_real(const TensorR& x, const TensorR& w) { return linear_impl(x, w); }

TensorI maxpool2d(const TensorI& x, std::int64_t window, std::int64_t stride) {
  return maxpool_impl(x, window, stride);
}

TensorR maxpool2d(const TensorR& x, std::int64_t window, std::int64_t stride) {
  return maxpool_impl(x, window, stride);
}

TensorI add_checked(const TensorI& a, const TensorI& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("cannot add " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  TensorI out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] >= kAccumulatorLimit || a[i] <= -kAccumulatorLimit || b[i] >= kAccumulatorLimit ||
        b[i] <= -kAccumulatorLimit) {
      throw OverflowError("residual add operand outside the 2^62 accumulator range");
    }
    const std::int64_t s = a[i] + b[i];
    if (s >= kAccumulatorLimit || s <= -kAccumulatorLimit) {
      throw OverflowError("residual add leaves the 2^62 accumulator range");
    }
    out[i] = s;
  }
  return out;
}

TensorR to_real(const TensorI& t) {
  std::vector<double> d(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) d[i] = static_cast<double>(t[i]);
  return TensorR(t.shape(), std::move(d));
}

TensorI to_int(const TensorR& t) {
  std::vector<std::int64_t> d(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (v != std::floor(v) || std::fabs(v) >= 9007199254740992.0) {
      throw DomainError("value " + std::to_string(v) + " is not an exactly representable integer");
    }
    d[i] = static_cast<std::int64_t>(v);
  }
  return TensorI(t.shape(), std::move(d));
}

}  // namespace kquant
