// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode rules for the real-valued training kernels.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kquant/tensor.hpp"

namespace kquant {

TensorR conv2d_real_backward_input(const TensorR& grad_out, const TensorR& w, const ConvSpec& spec,
                                   const Shape4& input_shape);
TensorR conv2d_real_backward_weight(const TensorR& grad_out, const TensorR& x, const ConvSpec& spec);

TensorR linear_real_backward_input(const TensorR& grad_out, const TensorR& w, const Shape4& input_shape);
TensorR linear_real_backward_weight(const TensorR& grad_out, const TensorR& x);

/// Max pool that also records, per output, the flat input index of the first
/// maximum in window order.
TensorR maxpool2d_argmax(const TensorR& x, std::int64_t window, std::int64_t stride,
                         std::vector<std::uint32_t>& argmax);
TensorR maxpool2d_backward(const TensorR& grad_out, std::span<const std::uint32_t> argmax,
                           const Shape4& input_shape);

struct LossResult {
  double loss = 0.0;  ///< mean over the batch
  std::int64_t correct = 0;
  TensorR grad;       ///< d loss / d logits
};

/// Mean softmax cross-entropy of scale * logits. The scale is treated as a
/// constant.
LossResult softmax_cross_entropy(const TensorR& logits, std::span<const std::int32_t> labels,
                                 double scale);

}  // namespace kquant
