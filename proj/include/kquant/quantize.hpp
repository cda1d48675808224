// SPDX-License-Identifier: Apache-2.0
//
// Quantizers for the integer datapath.
//
// Activation levels come from a k-quantile threshold table: with k = 2^b_a
// levels and Z = P(X <= 0) under N(mu, sigma), the real cut points are
//
//   tau_i = F^-1(Z + i * (1 - Z) / k),   i = 1 .. k-1
//
// rounded to integers t_i. A MAC value x maps to
//
//   0      if x <= 0
//   j      if t_{j-1} < x <= t_j   (t_0 = 0, j = 1 .. k-2)
//   k - 1  if x > t_{k-2}
//
// so the top level absorbs both (t_{k-2}, t_{k-1}] and the open tail, and
// t_{k-1} never reaches a comparator. It is kept in the table because it is
// part of the exported record.
#pragma once

#include <cstdint>
#include <vector>

#include "kquant/gaussmath.hpp"
#include "kquant/tensor.hpp"

namespace kquant {

inline constexpr int kMinActivationBits = 1;
inline constexpr int kMaxActivationBits = 8;
inline constexpr int kMinWeightBits = 2;
inline constexpr int kMaxWeightBits = 8;

struct QuantConfig {
  int b_a = 4;  ///< activation bits, unsigned levels 0 .. 2^b_a - 1
  int b_w = 4;  ///< weight bits, signed levels within +-(2^(b_w-1) - 1)
  RoundingPolicy rounding{};
  bool operator==(const QuantConfig&) const = default;
};

void validate(const QuantConfig& cfg);
void validate_activation_bits(int b_a);
void validate_weight_bits(int b_w);

/// 2^b_a - 1
std::int64_t max_level(int b_a);
/// 2^(b_w-1) - 1
std::int64_t max_weight(int b_w);

struct ThresholdTable {
  int b_a = 1;
  std::vector<std::int64_t> thresholds;  ///< t_1 .. t_{k-1}, strictly increasing
  double z = 0.0;                        ///< P(X <= 0) under `source`
  GaussParams source{};

  std::int64_t levels() const { return std::int64_t{1} << b_a; }
  bool operator==(const ThresholdTable&) const = default;
};

/// Throws DegenerateError when the thresholds are not positive and strictly
/// increasing or their count is not 2^b_a - 1.
void validate(const ThresholdTable& table);

/// Throws DegenerateError if rounding makes two thresholds equal or pushes
/// t_1 to zero; sigma is then too small for b_a.
ThresholdTable build_threshold_table(const GaussParams& p, int b_a, RoundingPolicy rounding = {});

std::int64_t quantize_activation(std::int64_t x, const ThresholdTable& table);
/// Real-valued counterpart used by the training path. Agrees with the integer
/// overload on integral inputs.
std::int64_t quantize_activation(double x, const ThresholdTable& table);

/// Gate-level model of the hardware: a sign/zero gate plus one strict
/// greater-than comparator per wired threshold, level = gate + popcount.
std::int64_t eval_comparator_chain(std::int64_t x, const ThresholdTable& table);

struct QuantizedWeights {
  TensorI values;
  GaussParams params{};  ///< population mean and stddev of the source weights
  int b_w = 4;
  bool operator==(const QuantizedWeights&) const = default;
};

/// Population mean and standard deviation over every element.
GaussParams weight_moments(const TensorR& w);

/// q = clamp(round((F(w; mu_w, sigma_w) - 0.5) * 2^b_w), -(2^(b_w-1)-1), 2^(b_w-1)-1)
QuantizedWeights quantize_weights(const TensorR& w, int b_w, RoundingPolicy rounding = {});

/// Worst-case MAC magnitude (2^b_a - 1)(2^(b_w-1) - 1) * fan_in.
std::int64_t max_mac(int b_a, int b_w, std::int64_t fan_in);

struct ShiftSpec {
  std::int64_t n_f = 1;  ///< taps per output, I * K^2
  int shift = 0;
  int b_a = 4;
  int b_w = 4;
};

/// Smallest shift s with max_mac >> s <= 2^b_a - 1.
ShiftSpec make_shift_spec(int b_a, int b_w, std::int64_t n_f);

/// Linear activation by right shift; negative MACs are zeroed first.
std::int64_t linear_shift_quantize(std::int64_t mac, const ShiftSpec& spec);

/// Priority encoder: position of the most significant set bit, 0 for mac <= 0.
std::int64_t log2_quantize(std::int64_t mac);

}  // namespace kquant
