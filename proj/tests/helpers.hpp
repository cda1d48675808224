// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "kquant/rng.hpp"
#include "kquant/tensor.hpp"

namespace kquant::testing {

inline TensorR random_real(const Shape4& s, Rng& rng, double scale = 1.0) {
  TensorR t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

inline TensorI random_int(const Shape4& s, Rng& rng, std::int64_t lo, std::int64_t hi) {
  TensorI t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_int(lo, hi);
  return t;
}

inline double dot(const TensorR& a, const TensorR& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-12});
}

}  // namespace kquant::testing
