// SPDX-License-Identifier: Apache-2.0
#include "kquant/gaussmath.hpp"

#include <array>
#include <cmath>
#include <string>

#include "kquant/error.hpp"

namespace kquant {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be finite");
  }
}

double std_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
double std_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// Rational approximation of the standard normal quantile for p in (0, 0.5],
// relative error about 1e-9.
double std_quantile_guess(double p) {
  static constexpr std::array<double, 6> a = {
      -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b = {
      -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr std::array<double, 6> c = {
      -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d = {
      7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Standard quantile of a lower-tail probability p in (0, 0.5].
double std_quantile_lower(double p) {
  double z = std_quantile_guess(p);
  // One Halley step on Phi(z) - p.
  const double u = (std_cdf(z) - p) / std_pdf(z);
  z -= u / (1.0 + 0.5 * z * u);
  return z;
}

double std_quantile(double p) {
  if (p <= 0.5) {
    return std_quantile_lower(p);
  }
  return -std_quantile_lower(1.0 - p);
}

void require_probability(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw DomainError("probability must lie in the open interval (0, 1), got " +
                      std::to_string(q));
  }
}

}  // namespace

void validate(const GaussParams& p) {
  require_finite(p.mu, "mu");
  require_finite(p.sigma, "sigma");
  if (!(p.sigma > 0.0)) {
    throw DomainError("sigma must be positive, got " + std::to_string(p.sigma));
  }
}

std::string_view to_string(RoundingMode mode) {
  switch (mode) {
    case RoundingMode::nearest:
      return "nearest";
    case RoundingMode::floor:
      return "floor";
    case RoundingMode::ceil:
      return "ceil";
  }
  return "nearest";
}

RoundingMode rounding_mode_from_string(std::string_view name) {
  if (name == "nearest") return RoundingMode::nearest;
  if (name == "floor") return RoundingMode::floor;
  if (name == "ceil") return RoundingMode::ceil;
  throw DomainError("unknown rounding mode '" + std::string(name) + "'");
}

double normal_cdf(double x, const GaussParams& p) {
  validate(p);
  require_finite(x, "x");
  return std_cdf((x - p.mu) / p.sigma);
}

double normal_sf(double x, const GaussParams& p) {
  validate(p);
  require_finite(x, "x");
  return std_cdf((p.mu - x) / p.sigma);
}

double normal_pdf(double x, const GaussParams& p) {
  validate(p);
  require_finite(x, "x");
  return std_pdf((x - p.mu) / p.sigma) / p.sigma;
}

double normal_quantile(double q, const GaussParams& p) {
  validate(p);
  require_probability(q);
  return p.mu + p.sigma * std_quantile(q);
}

double normal_quantile_upper(double upper, const GaussParams& p) {
  validate(p);
  require_probability(upper);
  return p.mu - p.sigma * std_quantile(upper);
}

std::int64_t round_scalar(double x, RoundingPolicy policy) {
  require_finite(x, "x");
  constexpr double kLimit = 4611686018427387904.0;  // 2^62
  if (std::fabs(x) >= kLimit) {
    throw OverflowError("value " + std::to_string(x) + " exceeds the 2^62 rounding range");
  }
  switch (policy.mode) {
    case RoundingMode::nearest:
      return static_cast<std::int64_t>(std::round(x));
    case RoundingMode::floor:
      return static_cast<std::int64_t>(std::floor(x));
    case RoundingMode::ceil:
      return static_cast<std::int64_t>(std::ceil(x));
  }
  return 0;
}

}  // namespace kquant
