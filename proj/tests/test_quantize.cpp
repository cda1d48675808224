// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "kquant/error.hpp"
#include "kquant/quantize.hpp"

using namespace kquant;
using namespace kquant::testing;

namespace {

double oracle_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

// Bisection on the erfc CDF; independent of the library quantile.
double oracle_quantile(double q, double mu, double sigma) {
  double lo = mu - 40.0 * sigma, hi = mu + 40.0 * sigma;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (oracle_cdf(mid, mu, sigma) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<std::int64_t> oracle_thresholds(double mu, double sigma, int b_a) {
  const double z = oracle_cdf(0.0, mu, sigma);
  const int k = 1 << b_a;
  std::vector<std::int64_t> t;
  for (int i = 1; i < k; ++i) t.push_back(std::llround(oracle_quantile(z + i * (1.0 - z) / k, mu, sigma)));
  return t;
}

std::int64_t oracle_level(std::int64_t x, const std::vector<std::int64_t>& t) {
  if (x <= 0) return 0;
  std::int64_t j = 1;
  while (j <= static_cast<std::int64_t>(t.size()) - 1 && x > t[static_cast<std::size_t>(j - 1)]) ++j;
  return j;
}

const ThresholdTable& example_table() {
  static const ThresholdTable t = build_threshold_table({900.0, 900.0}, 2);
  return t;
}

}  // namespace

TEST_CASE("threshold table worked example") {
  const ThresholdTable& t = example_table();
  CHECK(t.thresholds == std::vector<std::int64_t>{599, 1080, 1625});
  CHECK(t.z == doctest::Approx(0.15865525393145705).epsilon(1e-14));
  CHECK(build_threshold_table({0.0, 900.0}, 1).thresholds == std::vector<std::int64_t>{607});
}

TEST_CASE("threshold tables match the bisection oracle") {
  for (double mu : {-2000.0, 0.0, 350.0, 900.0, 5000.0})
    for (double sigma : {700.0, 2500.0, 40000.0})
      for (int b_a : {1, 2, 3, 4}) {
        if (sigma < 700.0 * (1 << b_a) / 4.0) continue;
        CAPTURE(mu);
        CAPTURE(sigma);
        CAPTURE(b_a);
        const ThresholdTable t = build_threshold_table({mu, sigma}, b_a);
        CHECK(t.thresholds == oracle_thresholds(mu, sigma, b_a));
        CHECK_NOTHROW(validate(t));
      }
}

TEST_CASE("positive bins are equiprobable before rounding") {
  for (const GaussParams p : {GaussParams{900, 900}, GaussParams{-300, 1200}, GaussParams{5, 1}})
    for (int b_a = 1; b_a <= 8; ++b_a) {
      const double z = normal_cdf(0.0, p);
      const int k = 1 << b_a;
      const double mass = (1.0 - z) / k;
      std::vector<double> tau;
      for (int i = 1; i < k; ++i) tau.push_back(normal_quantile(z + i * mass, p));
      CHECK(std::fabs(normal_cdf(tau[0], p) - z - mass) < 1e-9);
      for (int j = 1; j + 1 < k; ++j) {
        // Levels 1 .. k-2 each hold one slice; t_{k-1} is not wired.
        CHECK(std::fabs(normal_cdf(tau[static_cast<std::size_t>(j)], p) -
                        normal_cdf(tau[static_cast<std::size_t>(j - 1)], p) - mass) < 1e-9);
      }
      // The top level holds (t_{k-2}, inf), two slices.
      if (k > 2) CHECK(std::fabs(1.0 - normal_cdf(tau[static_cast<std::size_t>(k - 3)], p) - 2.0 * mass) < 1e-9);
    }
}

TEST_CASE("Monte Carlo bin masses after rounding") {
  Rng rng(7);
  for (int b_a : {1, 2, 3}) {
    const GaussParams p{300.0, std::ldexp(1.0, b_a + 4) * 8.0};
    const ThresholdTable t = build_threshold_table(p, b_a);
    const std::int64_t k = t.levels();
    const int n = 1000000;
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(quantize_activation(rng.normal(p.mu, p.sigma), t))] += 1;
    std::vector<double> expect(static_cast<std::size_t>(k));
    expect[0] = oracle_cdf(0.0, p.mu, p.sigma);
    double prev = expect[0];
    for (std::int64_t j = 1; j < k - 1; ++j) {
      const double c = oracle_cdf(static_cast<double>(t.thresholds[static_cast<std::size_t>(j - 1)]), p.mu, p.sigma);
      expect[static_cast<std::size_t>(j)] = c - prev;
      prev = c;
    }
    expect[static_cast<std::size_t>(k - 1)] = 1.0 - prev;
    for (std::int64_t j = 0; j < k; ++j) {
      const double e = expect[static_cast<std::size_t>(j)];
      const double sd = std::sqrt(n * e * (1 - e));
      CAPTURE(b_a);
      CAPTURE(j);
      CHECK(std::fabs(counts[static_cast<std::size_t>(j)] - n * e) <= 4.0 * sd);
    }
  }
}

TEST_CASE("quantize_activation examples and monotonicity") {
  const ThresholdTable& t = example_table();
  CHECK(quantize_activation(std::int64_t{-5}, t) == 0);
  CHECK(quantize_activation(std::int64_t{0}, t) == 0);
  CHECK(quantize_activation(std::int64_t{1}, t) == 1);
  CHECK(quantize_activation(std::int64_t{599}, t) == 1);
  CHECK(quantize_activation(std::int64_t{600}, t) == 2);
  CHECK(quantize_activation(std::int64_t{1080}, t) == 2);
  CHECK(quantize_activation(std::int64_t{1081}, t) == 3);
  CHECK(quantize_activation(std::int64_t{1625}, t) == 3);
  CHECK(quantize_activation(std::int64_t{1000000000}, t) == 3);
  CHECK(quantize_activation(900.0, t) == 2);
  std::int64_t prev = 0;
  for (std::int64_t x = -100; x <= 3000; ++x) {
    const std::int64_t q = quantize_activation(x, t);
    CHECK(q >= prev);
    CHECK(q == oracle_level(x, t.thresholds));
    CHECK(quantize_activation(static_cast<double>(x), t) == q);
    prev = q;
  }
}

TEST_CASE("comparator chain equals the direct quantizer") {
  std::vector<ThresholdTable> tables{example_table(), build_threshold_table({0.0, 900.0}, 1),
                                     build_threshold_table({-50000.0, 200000.0}, 4),
                                     build_threshold_table({200.0, 30000.0}, 8)};
  for (const auto& t : tables) {
    CHECK(eval_comparator_chain(0, t) == 0);
    for (std::size_t j = 0; j + 1 < t.thresholds.size(); ++j)
      CHECK(eval_comparator_chain(t.thresholds[j], t) == static_cast<std::int64_t>(j) + 1);
    bool same = true;
    for (std::int64_t x = -(std::int64_t{1} << 20); x <= (std::int64_t{1} << 20); ++x)
      same = same && eval_comparator_chain(x, t) == quantize_activation(x, t);
    CHECK(same);
    CHECK(eval_comparator_chain(INT64_MIN, t) == 0);
    CHECK(eval_comparator_chain(INT64_MAX, t) == t.levels() - 1);
  }
}

TEST_CASE("degenerate tables are rejected") {
  CHECK_THROWS_AS(build_threshold_table({0.0, 1.0}, 4), DegenerateError);
  CHECK_THROWS_AS(build_threshold_table({0.0, 0.0}, 2), DomainError);
  CHECK_THROWS_AS(build_threshold_table({0.0, 900.0}, 9), DomainError);
  ThresholdTable bad = example_table();
  bad.thresholds[1] = bad.thresholds[0];
  CHECK_THROWS_AS(validate(bad), DegenerateError);
  bad.thresholds.pop_back();
  CHECK_THROWS_AS(validate(bad), DegenerateError);
}

TEST_CASE("weight quantizer examples") {
  // Two-point tensor: mu = 0, sigma = 1.
  const TensorR w({1, 1, 1, 4}, {-1.0, 1.0, 0.0, 0.0});
  const GaussParams m = weight_moments(w);
  CHECK(m.mu == 0.0);
  CHECK(m.sigma == doctest::Approx(std::sqrt(0.5)));
  const TensorR two({1, 1, 1, 2}, {-1.0, 1.0});
  const QuantizedWeights q = quantize_weights(two, 3);
  CHECK(q.params == GaussParams{0.0, 1.0});
  CHECK(q.values == TensorI({1, 1, 1, 2}, {-3, 3}));
  CHECK(std::llround((oracle_cdf(1.0, 0.0, 1.0) - 0.5) * 8.0) == 3);
  CHECK(quantize_weights(w, 3).values[2] == 0);

  // A far outlier is clamped to the symmetric limit.
  std::vector<double> vals(200, 0.0);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = (i % 2 == 0 ? 1.0 : -1.0);
  vals[0] = 100.0;
  const QuantizedWeights qo = quantize_weights(TensorR({1, 1, 1, 200}, vals), 3);
  CHECK(qo.values[0] == 3);
  CHECK_THROWS_AS(quantize_weights(TensorR({1, 1, 1, 4}, 0.25), 4), DegenerateError);
  CHECK_THROWS_AS(quantize_weights(two, 1), DomainError);
}

TEST_CASE("weight quantizer is monotone, bounded and symmetric") {
  Rng rng(9);
  for (int b_w = 2; b_w <= 8; ++b_w) {
    const TensorR w = random_real({4, 3, 3, 3}, rng, 0.3);
    TensorR mirrored(w.shape());
    const GaussParams m = weight_moments(w);
    for (std::size_t i = 0; i < w.size(); ++i) mirrored[i] = 2.0 * m.mu - w[i];
    const QuantizedWeights q = quantize_weights(w, b_w);
    const QuantizedWeights qm = quantize_weights(mirrored, b_w);
    const std::int64_t lim = max_weight(b_w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(std::llabs(q.values[i]) <= lim);
      for (std::size_t j = 0; j < w.size(); ++j)
        if (w[i] <= w[j]) CHECK(q.values[i] <= q.values[j]);
      const double s = (oracle_cdf(w[i], m.mu, m.sigma) - 0.5) * std::ldexp(1.0, b_w);
      if (std::fabs(std::fabs(s - std::trunc(s)) - 0.5) > 1e-9) CHECK(qm.values[i] == -q.values[i]);
    }
  }
}

TEST_CASE("linear shift quantizer") {
  const ShiftSpec s = make_shift_spec(4, 4, 9);
  CHECK(max_mac(4, 4, 9) == 945);
  CHECK(s.shift == 6);
  CHECK(linear_shift_quantize(945, s) == 14);
  CHECK(linear_shift_quantize(-100, s) == 0);
  CHECK(linear_shift_quantize(0, s) == 0);
  for (int b_a = 1; b_a <= 8; ++b_a)
    for (int b_w = 2; b_w <= 8; ++b_w)
      for (std::int64_t n_f : {1, 2, 3, 9, 27, 64, 144, 576, 1152, 4608}) {
        const std::int64_t m = max_mac(b_a, b_w, n_f);
        // Smallest shift that keeps the worst-case MAC inside the level range.
        int best = 0;
        while ((m >> best) > max_level(b_a)) ++best;
        const ShiftSpec spec = make_shift_spec(b_a, b_w, n_f);
        CAPTURE(b_a);
        CAPTURE(b_w);
        CAPTURE(n_f);
        CHECK(spec.shift == best);
        Rng rng(static_cast<std::uint64_t>(b_a * 1000 + b_w * 100 + n_f));
        bool fits = true;
        for (int i = 0; i < 200; ++i) {
          const std::int64_t mac = rng.uniform_int(0, m);
          fits = fits && (mac >> spec.shift) <= max_level(b_a) &&
                 linear_shift_quantize(mac, spec) == (mac >> spec.shift);
        }
        CHECK(fits);
        CHECK((m >> spec.shift) <= max_level(b_a));
      }
}

TEST_CASE("log2 quantizer") {
  CHECK(log2_quantize(1) == 0);
  CHECK(log2_quantize(5) == 2);
  CHECK(log2_quantize(0) == 0);
  CHECK(log2_quantize(-7) == 0);
  bool same = true;
  for (std::int64_t x = 1; x <= (std::int64_t{1} << 20); ++x) {
    auto f = static_cast<std::int64_t>(std::floor(std::log2(static_cast<double>(x))));
    if ((std::int64_t{1} << (f + 1)) <= x) ++f;
    if ((std::int64_t{1} << f) > x) --f;
    same = same && log2_quantize(x) == f;
  }
  CHECK(same);
  CHECK(log2_quantize(INT64_MAX) == 62);
}
