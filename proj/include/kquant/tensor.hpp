// SPDX-License-Identifier: Apache-2.0
//
// Dense NCHW tensors and reference kernels. The integer kernels accumulate in
// int64 and check their worst-case bound before running; the real kernels are
// the training-path counterparts with identical geometry.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kquant/error.hpp"

namespace kquant {

struct Shape4 {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t size() const { return n * c * h * w; }
  std::int64_t per_sample() const { return c * h * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T{});
  Tensor(Shape4 shape, std::vector<T> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Same data viewed with a new shape of equal size.
  Tensor reshaped(Shape4 shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using TensorR = Tensor<double>;
using TensorI = Tensor<std::int64_t>;

/// Geometry of a convolution. Weights are laid out out_ch x in_ch x kernel x
/// kernel. A fully connected layer is the kernel=1 case over flattened input.
struct ConvSpec {
  std::int64_t out_ch = 1;
  std::int64_t in_ch = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 1;

  std::int64_t fan_in() const { return in_ch * kernel * kernel; }
  Shape4 weight_shape() const { return {out_ch, in_ch, kernel, kernel}; }
  bool operator==(const ConvSpec&) const = default;
};

void validate(const ConvSpec& spec);
Shape4 conv_output_shape(const Shape4& input, const ConvSpec& spec);
Shape4 pool_output_shape(const Shape4& input, std::int64_t window, std::int64_t stride);

/// Largest |v| in the tensor.
std::int64_t max_abs(const TensorI& t);
double max_abs(const TensorR& t);

TensorI conv2d_int(const TensorI& x, const TensorI& w, const ConvSpec& spec);
TensorR conv2d_real(const TensorR& x, const TensorR& w, const ConvSpec& spec);

/// x is treated as n rows of c*h*w features; w is out x in x 1 x 1. Output is
/// n x out x 1 x 1.
TensorI linear_int(const TensorI& x, const TensorI& w);
TensorR linear_real(const TensorR& x, const TensorR& w);

TensorI maxpool2d(const TensorI& x, std::int64_t window, std::int64_t stride);
TensorR maxpool2d(const TensorR& x, std::int64_t window, std::int64_t stride);

/// Elementwise sum with an overflow check against the 2^62 accumulator limit.
TensorI add_checked(const TensorI& a, const TensorI& b);

/// Lossless conversions between the integer and real domains. to_int throws
/// DomainError for any non-integral or out-of-range element.
TensorR to_real(const TensorI& t);
TensorI to_int(const TensorR& t);

extern template class Tensor<double>;
extern template class Tensor<std::int64_t>;

}  // namespace kquant
