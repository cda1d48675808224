// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "kquant/error.hpp"
#include "kquant/gaussmath.hpp"

using namespace kquant;
using namespace kquant::testing;

namespace {

// Reference values computed with mpmath at 40 digits.
struct CdfRef {
  double z;
  double cdf;
};
constexpr CdfRef kCdf[] = {
    {-1.0, 0.15865525393145705141},   {1.0, 0.84134474606854294859},
    {-5.0, 2.8665157187919391167e-7}, {-10.0, 7.619853024160526066e-24},
    {2.5, 0.99379033467422386483},    {0.3, 0.61791142218895263307},
};

// Quantile by bisection on the reference erfc; shares no code with the
// rational approximation under test.
double bisect_quantile(double q, double mu, double sigma) {
  double lo = mu - 40 * sigma, hi = mu + 40 * sigma;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double c = 0.5 * std::erfc(-(mid - mu) / (sigma * std::sqrt(2.0)));
    (c < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("normal_cdf reference values") {
  CHECK(normal_cdf(0.0, {0.0, 1.0}) == 0.5);
  for (const auto& r : kCdf) {
    const double got = normal_cdf(r.z, {0.0, 1.0});
    CHECK(std::fabs(got - r.cdf) <= 1e-12);
    if (r.cdf < 1e-3) CHECK(rel_err(got, r.cdf) < 1e-12);
  }
  CHECK(normal_cdf(0.0, {900.0, 900.0}) == doctest::Approx(0.15865525393145705).epsilon(1e-14));
  CHECK(normal_sf(10.0, {0.0, 1.0}) == doctest::Approx(7.619853024160526e-24).epsilon(1e-12));
}

TEST_CASE("normal_cdf reflection and monotonicity") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const GaussParams p{rng.uniform(-1e3, 1e3), rng.uniform(0.1, 1e3)};
    const double x = p.mu + p.sigma * rng.uniform(-8, 8);
    CHECK(normal_cdf(x, p) + normal_cdf(2 * p.mu - x, p) == doctest::Approx(1.0).epsilon(1e-14));
    const double x2 = x + p.sigma * rng.uniform(1e-6, 2.0);
    CHECK(normal_cdf(x, p) < normal_cdf(x2, p));
  }
}

TEST_CASE("normal_quantile against bisection and reference values") {
  CHECK(normal_quantile(0.5, {7.0, 3.0}) == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(normal_quantile(0.75, {0.0, 1.0}) == doctest::Approx(0.6744897501960817).epsilon(1e-14));
  CHECK(normal_quantile(0.975, {0.0, 1.0}) == doctest::Approx(1.9599639845400542).epsilon(1e-14));
  CHECK(normal_quantile(1e-10, {0.0, 1.0}) == doctest::Approx(-6.361340902404056).epsilon(1e-13));
  CHECK(normal_quantile_upper(1e-6, {0.0, 1.0}) ==
        doctest::Approx(4.753424308822899).epsilon(1e-13));
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const double q = rng.uniform(1e-6, 1 - 1e-6);
    const GaussParams p{rng.uniform(-50, 50), rng.uniform(0.5, 20)};
    CHECK(std::fabs(normal_quantile(q, p) - bisect_quantile(q, p.mu, p.sigma)) < 1e-9 * p.sigma);
    CHECK(std::fabs(normal_cdf(normal_quantile(q, p), p) - q) < 1e-10);
  }
}

TEST_CASE("quantile/cdf round trip on mu +- 4 sigma") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const GaussParams p{rng.uniform(-100, 100), rng.uniform(0.1, 100)};
    const double x = p.mu + p.sigma * rng.uniform(-4, 4);
    CHECK(std::fabs(normal_quantile(normal_cdf(x, p), p) - x) <= 1e-9 * std::max(1.0, p.sigma));
  }
}

TEST_CASE("normal_quantile is monotone") {
  double prev = -INFINITY;
  for (int i = 1; i < 10000; ++i) {
    const double x = normal_quantile(i / 10000.0, {0.0, 1.0});
    CHECK(x > prev);
    prev = x;
  }
}

TEST_CASE("normal_pdf peak, tail and derivative") {
  CHECK(normal_pdf(3.0, {3.0, 1.0}) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
  CHECK(normal_pdf(0.0, {0.0, 2.0}) == doctest::Approx(0.3989422804014327 / 2).epsilon(1e-15));
  CHECK(normal_pdf(10.0, {0.0, 1.0}) < 1e-20);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const GaussParams p{rng.uniform(-10, 10), rng.uniform(0.1, 10)};
    const double x = p.mu + p.sigma * rng.uniform(-3, 3);
    const double h = 1e-4 * p.sigma;
    const double fd = (normal_cdf(x + h, p) - normal_cdf(x - h, p)) / (2 * h);
    CHECK(rel_err(fd, normal_pdf(x, p)) < 1e-6);
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(normal_cdf(0.0, {0.0, 0.0}), DomainError);
  CHECK_THROWS_AS(normal_cdf(NAN, {0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(normal_pdf(0.0, {0.0, -1.0}), DomainError);
  CHECK_THROWS_AS(normal_quantile(0.0, {0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0, {0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(normal_quantile(0.5, {INFINITY, 1.0}), DomainError);
}

TEST_CASE("round_scalar") {
  const RoundingPolicy nearest{}, floor{RoundingMode::floor}, ceil{RoundingMode::ceil};
  CHECK(round_scalar(2.5, nearest) == 3);
  CHECK(round_scalar(-2.5, nearest) == -3);
  CHECK(round_scalar(2.49, nearest) == 2);
  CHECK(round_scalar(-0.1, floor) == -1);
  CHECK(round_scalar(-0.1, ceil) == 0);
  CHECK(round_scalar(0.1, ceil) == 1);
  CHECK_THROWS_AS(round_scalar(std::ldexp(1.0, 62), nearest), OverflowError);
  CHECK_THROWS_AS(round_scalar(NAN, nearest), DomainError);
  CHECK(rounding_mode_from_string("floor") == RoundingMode::floor);
  CHECK(to_string(RoundingMode::ceil) == "ceil");
  CHECK_THROWS_AS(rounding_mode_from_string("banker"), DomainError);
}
