// SPDX-License-Identifier: Apache-2.0
#include "kquant/quantize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "kquant/error.hpp"

namespace kquant {

void validate_activation_bits(int b_a) {
  if (b_a < kMinActivationBits || b_a > kMaxActivationBits) {
    throw DomainError("activation bits must be in [1, 8], got " + std::to_string(b_a));
  }
}

void validate_weight_bits(int b_w) {
  if (b_w < kMinWeightBits || b_w > kMaxWeightBits) {
    throw DomainError("weight bits must be in [2, 8], got " + std::to_string(b_w));
  }
}

void validate(const QuantConfig& cfg) {
  validate_activation_bits(cfg.b_a);
  validate_weight_bits(cfg.b_w);
}

std::int64_t max_level(int b_a) { return (std::int64_t{1} << b_a) - 1; }
std::int64_t max_weight(int b_w) { return (std::int64_t{1} << (b_w - 1)) - 1; }

void validate(const ThresholdTable& table) {
  validate_activation_bits(table.b_a);
  const auto& t = table.thresholds;
  if (static_cast<std::int64_t>(t.size()) != table.levels() - 1) {
    throw DegenerateError("threshold table for b_a=" + std::to_string(table.b_a) + " needs " +
                          std::to_string(table.levels() - 1) + " thresholds, has " +
                          std::to_string(t.size()));
  }
  if (t.front() <= 0) {
    throw DegenerateError("first threshold must be positive, got " + std::to_string(t.front()));
  }
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] <= t[i - 1]) {
      throw DegenerateError("thresholds t_" + std::to_string(i) + "=" + std::to_string(t[i - 1]) +
                            " and t_" + std::to_string(i + 1) + "=" + std::to_string(t[i]) +
                            " are not strictly increasing");
    }
  }
}

ThresholdTable build_threshold_table(const GaussParams& p, int b_a, RoundingPolicy rounding) {
  validate(p);
  validate_activation_bits(b_a);
  ThresholdTable table;
  table.b_a = b_a;
  table.source = p;
  table.z = normal_cdf(0.0, p);
  // Work with upper-tail masses 1 - b_i = (1 - Z)(k - i)/k so that tables with
  // Z close to one keep their precision.
  const double tail = normal_sf(0.0, p);
  const std::int64_t k = table.levels();
  table.thresholds.reserve(static_cast<std::size_t>(k - 1));
  for (std::int64_t i = 1; i < k; ++i) {
    const double upper = tail * static_cast<double>(k - i) / static_cast<double>(k);
    if (!(upper > 0.0)) {
      throw DegenerateError("upper-tail mass underflows for mu=" + std::to_string(p.mu) +
                            ", sigma=" + std::to_string(p.sigma));
    }
    table.thresholds.push_back(round_scalar(normal_quantile_upper(upper, p), rounding));
  }
  try {
    validate(table);
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string(e.what()) + " (sigma=" + std::to_string(p.sigma) +
                          " is too small for b_a=" + std::to_string(b_a) + ")");
  }
  return table;
}

std::int64_t quantize_activation(std::int64_t x, const ThresholdTable& table) {
  if (x <= 0) return 0;
  // Cut points above zero are t_1 .. t_{k-2}; level = 1 + #{t_j < x}.
  const auto first = table.thresholds.begin();
  const auto last = first + (table.levels() - 2);
  return 1 + (std::lower_bound(first, last, x) - first);
}

std::int64_t quantize_activation(double x, const ThresholdTable& table) {
  if (!(x > 0.0)) return 0;
  const auto first = table.thresholds.begin();
  const auto last = first + (table.levels() - 2);
  const auto it = std::lower_bound(first, last, x, [](std::int64_t t, double v) {
    return static_cast<double>(t) < v;
  });
  return 1 + (it - first);
}

std::int64_t eval_comparator_chain(std::int64_t x, const ThresholdTable& table) {
  const std::uint64_t sign = static_cast<std::uint64_t>(x) >> 63;
  const std::uint64_t gate = (sign ^ 1U) & static_cast<std::uint64_t>(x != 0);
  std::int64_t count = static_cast<std::int64_t>(gate);
  const std::int64_t wired = table.levels() - 2;
  for (std::int64_t j = 0; j < wired; ++j) {
    const std::uint64_t gt = static_cast<std::uint64_t>(x > table.thresholds[static_cast<std::size_t>(j)]);
    count += static_cast<std::int64_t>(gt & gate);
  }
  return count;
}

GaussParams weight_moments(const TensorR& w) {
  if (w.empty()) throw DegenerateError("empty weight tensor");
  double sum = 0.0;
  for (double v : w.data()) sum += v;
  const double n = static_cast<double>(w.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : w.data()) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

QuantizedWeights quantize_weights(const TensorR& w, int b_w, RoundingPolicy rounding) {
  validate_weight_bits(b_w);
  QuantizedWeights out;
  out.b_w = b_w;
  out.params = weight_moments(w);
  if (!(out.params.sigma > 0.0) || !std::isfinite(out.params.sigma)) {
    throw DegenerateError("weights have zero spread; cannot quantize");
  }
  const double scale = std::ldexp(1.0, b_w);
  const std::int64_t lim = max_weight(b_w);
  out.values = TensorI(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double s = (normal_cdf(w[i], out.params) - 0.5) * scale;
    out.values[i] = std::clamp(round_scalar(s, rounding), -lim, lim);
  }
  return out;
}

std::int64_t max_mac(int b_a, int b_w, std::int64_t fan_in) {
  validate_activation_bits(b_a);
  validate_weight_bits(b_w);
  if (fan_in < 1) throw DomainError("fan_in must be >= 1");
  std::int64_t out = 0;
  if (__builtin_mul_overflow(max_level(b_a) * max_weight(b_w), fan_in, &out)) {
    throw OverflowError("max MAC overflows int64 for fan_in " + std::to_string(fan_in));
  }
  return out;
}

ShiftSpec make_shift_spec(int b_a, int b_w, std::int64_t n_f) {
  const std::int64_t m = max_mac(b_a, b_w, n_f);
  ShiftSpec spec;
  spec.n_f = n_f;
  spec.b_a = b_a;
  spec.b_w = b_w;
  // bit_width(m) is floor(log2 m) + 1; it equals ceil(log2 m) except at exact
  // powers of two, where ceil would leave m >> s == 2^b_a.
  spec.shift = std::max(0, static_cast<int>(std::bit_width(static_cast<std::uint64_t>(m))) - b_a);
  return spec;
}

std::int64_t linear_shift_quantize(std::int64_t mac, const ShiftSpec& spec) {
  if (mac <= 0) return 0;
  return std::min(mac >> spec.shift, max_level(spec.b_a));
}

std::int64_t log2_quantize(std::int64_t mac) {
  if (mac <= 0) return 0;
  return static_cast<std::int64_t>(std::bit_width(static_cast<std::uint64_t>(mac))) - 1;
}

}  // namespace kquant
