// SPDX-License-Identifier: Apache-2.0
//
// Normal-distribution numerics and the rounding primitives shared by every
// quantizer. All functions are pure and thread-safe.
#pragma once

#include <cstdint>
#include <string_view>

namespace kquant {

struct GaussParams {
  double mu = 0.0;
  double sigma = 1.0;
  bool operator==(const GaussParams&) const = default;
};

/// Throws DomainError unless mu and sigma are finite and sigma > 0.
void validate(const GaussParams& p);

enum class RoundingMode { nearest, floor, ceil };

/// `nearest` rounds halves away from zero.
struct RoundingPolicy {
  RoundingMode mode = RoundingMode::nearest;
  bool operator==(const RoundingPolicy&) const = default;
};

std::string_view to_string(RoundingMode mode);
/// Accepts "nearest", "floor", "ceil"; throws DomainError otherwise.
RoundingMode rounding_mode_from_string(std::string_view name);

double normal_cdf(double x, const GaussParams& p);

/// Upper tail 1 - cdf, computed without cancellation.
double normal_sf(double x, const GaussParams& p);

double normal_pdf(double x, const GaussParams& p);

/// Inverse of normal_cdf for q in (0, 1). Rational initial guess refined by a
/// Halley step on the erfc-based CDF; round trip error is near machine
/// precision.
double normal_quantile(double q, const GaussParams& p);

/// Inverse of normal_sf: returns x with P(X > x) = upper. Use this when the
/// target probability is close to 1 and only its complement is accurate.
double normal_quantile_upper(double upper, const GaussParams& p);

/// Rounds to an integer under `policy`. Requires |x| < 2^62.
std::int64_t round_scalar(double x, RoundingPolicy policy);

}  // namespace kquant
