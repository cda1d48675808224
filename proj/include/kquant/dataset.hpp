// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kquant/tensor.hpp"

namespace kquant {

struct Split {
  std::vector<std::uint8_t> pixels;  ///< count * per-sample levels, row-major
  std::vector<std::int32_t> labels;

  std::size_t count() const { return labels.size(); }
};

struct Dataset {
  Shape4 sample{1, 1, 12, 12};
  int classes = 10;
  int input_bits = 4;
  Split train;
  Split test;
};

void validate(const Dataset& ds);

struct ToyOptions {
  std::int64_t train = 5000;
  std::int64_t test = 1000;
  int classes = 10;
  std::int64_t size = 12;         ///< image side
  std::int64_t template_size = 8;
  int input_bits = 4;
  double noise = 0.3;             ///< stddev of additive noise on [0, 1] intensities
  std::uint64_t seed = 1;
};

/// Translated, noised class templates on a single channel, quantized to
/// input_bits-wide levels. Fully determined by the options.
Dataset make_toy_dataset(const ToyOptions& opts = {});

/// Directory layout: dataset.json with {classes, shape [c,h,w], input_bits,
/// train {file, count}, test {file, count}}; each record in a .bin file is
/// one label byte followed by c*h*w level bytes.
Dataset load_tensor_directory(const std::filesystem::path& dir);
void save_tensor_directory(const Dataset& ds, const std::filesystem::path& dir);

TensorR batch_real(const Split& split, const Shape4& sample, std::span<const std::size_t> indices);
TensorI batch_int(const Split& split, const Shape4& sample, std::span<const std::size_t> indices);
std::vector<std::int32_t> batch_labels(const Split& split, std::span<const std::size_t> indices);

}  // namespace kquant
