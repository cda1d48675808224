// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <vector>

#include "helpers.hpp"
#include "kquant/autodiff.hpp"

using namespace kquant;
using namespace kquant::testing;

namespace {

// Central difference of L(x) = <g, f(x)> along every coordinate of x.
template <class F>
void check_gradient(TensorR x, const TensorR& analytic, const TensorR& g, F&& f) {
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double lp = dot(g, f(x));
    x[i] = x0 - h;
    const double lm = dot(g, f(x));
    x[i] = x0;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::fabs(fd - analytic[i]) <= 1e-6 * std::max(1.0, std::fabs(fd)));
  }
}

}  // namespace

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(11);
  for (ConvSpec spec : {ConvSpec{3, 2, 3, 1, 1}, ConvSpec{2, 3, 3, 2, 1}, ConvSpec{4, 2, 1, 2, 0}}) {
    const Shape4 xs{2, spec.in_ch, 5, 6};
    const TensorR x = random_real(xs, rng);
    const TensorR w = random_real(spec.weight_shape(), rng);
    const TensorR y = conv2d_real(x, w, spec);
    const TensorR g = random_real(y.shape(), rng);
    check_gradient(x, conv2d_real_backward_input(g, w, spec, xs), g,
                   [&](const TensorR& v) { return conv2d_real(v, w, spec); });
    check_gradient(w, conv2d_real_backward_weight(g, x, spec), g,
                   [&](const TensorR& v) { return conv2d_real(x, v, spec); });
  }
}

TEST_CASE("linear backward matches finite differences") {
  Rng rng(12);
  const Shape4 xs{3, 2, 2, 2};
  const TensorR x = random_real(xs, rng);
  const TensorR w = random_real({5, 8, 1, 1}, rng);
  const TensorR g = random_real({3, 5, 1, 1}, rng);
  check_gradient(x, linear_real_backward_input(g, w, xs), g,
                 [&](const TensorR& v) { return linear_real(v, w); });
  check_gradient(w, linear_real_backward_weight(g, x), g,
                 [&](const TensorR& v) { return linear_real(x, v); });
}

TEST_CASE("maxpool backward routes to the argmax") {
  Rng rng(13);
  const Shape4 xs{2, 3, 4, 6};
  const TensorR x = random_real(xs, rng);
  std::vector<std::uint32_t> arg;
  const TensorR y = maxpool2d_argmax(x, 2, 2, arg);
  CHECK(y == maxpool2d(x, 2, 2));
  const TensorR g = random_real(y.shape(), rng);
  check_gradient(x, maxpool2d_backward(g, arg, xs), g,
                 [&](const TensorR& v) { return maxpool2d(v, 2, 2); });
}

TEST_CASE("softmax cross entropy gradient") {
  Rng rng(14);
  const TensorR z = random_real({4, 5, 1, 1}, rng, 2.0);
  const std::vector<std::int32_t> labels{0, 3, 4, 1};
  const double scale = 1.7;
  const LossResult r = softmax_cross_entropy(z, labels, scale);
  TensorR zz = z;
  for (std::size_t i = 0; i < zz.size(); ++i) {
    const double z0 = zz[i];
    zz[i] = z0 + 1e-6;
    const double lp = softmax_cross_entropy(zz, labels, scale).loss;
    zz[i] = z0 - 1e-6;
    const double lm = softmax_cross_entropy(zz, labels, scale).loss;
    zz[i] = z0;
    CHECK((lp - lm) / 2e-6 == doctest::Approx(r.grad[i]).epsilon(1e-6));
  }
  TensorR uniform({1, 4, 1, 1}, 0.0);
  const std::vector<std::int32_t> one{2};
  CHECK(softmax_cross_entropy(uniform, one, 1.0).loss == doctest::Approx(std::log(4.0)));
}
