// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kquant {

/// Argument outside the mathematical domain of an operation (non-finite
/// input, sigma <= 0, probability outside (0,1)).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An integer result would not fit its declared range. Kernels raise this
/// instead of wrapping.
class OverflowError : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// Statistics too narrow for the requested bit width: rounding collapsed two
/// thresholds, or a weight tensor has zero spread.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The model is in the wrong state for the request, e.g. integer execution of
/// a partially quantized graph.
class ModelStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kquant
