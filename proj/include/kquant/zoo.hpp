// SPDX-License-Identifier: Apache-2.0
//
// Model builders. Weights are He-normal initialised from `seed`; every layer
// starts full precision.
#pragma once

#include <cstdint>
#include <vector>

#include "kquant/model.hpp"

namespace kquant {

/// conv3-128, conv3-128, maxpool, conv3-256, conv3-256, maxpool, conv3-512,
/// conv3-512, maxpool, FC-1024, FC-num_classes, with a threshold activation
/// after every conv/FC except the classifier.
ModelGraph build_vgg_like(int num_classes, const QuantConfig& quant, std::uint64_t seed = 1,
                          Shape4 input = {1, 3, 32, 32});

struct ResNetOptions {
  int stages = 2;
  int blocks_per_stage = 1;
  std::int64_t base_width = 8;
  int num_classes = 10;
  Shape4 input{1, 1, 12, 12};
  std::int64_t final_pool = 2;  ///< window and stride of the pool before the classifier
};

/// The CIFAR ResNet-18 layout: 4 stages x 2 blocks, widths 64..512.
ResNetOptions resnet18_options(int num_classes);

/// Stem conv, then stages of modified basic blocks. The first block of every
/// stage after the first halves the resolution, doubles the width and gets a
/// strided 1x1 shortcut convolution. A final activation, maxpool and FC
/// classifier close the network.
ModelGraph build_resnet_small(const ResNetOptions& opts, const QuantConfig& quant,
                              std::uint64_t seed = 1);

/// Small plain conv net for the builtin toy dataset:
/// conv3-w0, maxpool, conv3-w1, maxpool, FC-num_classes.
ModelGraph build_small_conv(int num_classes, const QuantConfig& quant, std::uint64_t seed = 1,
                            Shape4 input = {1, 1, 12, 12},
                            std::vector<std::int64_t> widths = {16, 32});

/// Builds a model by architecture name: "vgg_like", "resnet_small",
/// "resnet18", "small_conv". Throws ConfigError on unknown names.
ModelGraph build_model(std::string_view arch, int num_classes, const QuantConfig& quant,
                       std::uint64_t seed, Shape4 input);

}  // namespace kquant
