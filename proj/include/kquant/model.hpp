// SPDX-License-Identifier: Apache-2.0
//
// Layer graph shared by the training and integer-inference paths.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kquant/quantize.hpp"
#include "kquant/tensor.hpp"

namespace kquant {

/// Running mean/stddev of a MAC stream. count == 0 means "not yet observed";
/// the first batch initializes the estimate directly.
struct LayerStats {
  double mu = 0.0;
  double sigma = 0.0;
  double momentum_ema = 0.1;
  std::int64_t count = 0;

  GaussParams gauss() const { return {mu, sigma}; }
  bool operator==(const LayerStats&) const = default;
};

enum class LayerKind { conv, fc, maxpool, act_quant, residual_block };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Convolution or fully connected weights. `weights` is the full-precision
/// master copy; `qweights` is the frozen integer copy used by inference.
struct MacNode {
  ConvSpec spec{};
  TensorR weights;
  std::optional<QuantizedWeights> qweights;
};

/// Threshold activation with the statistics of the MAC stream it consumes.
struct ActNode {
  LayerStats stats;
  std::optional<ThresholdTable> table;
};

/// Basic block with the post-add activation moved to the next block's entry:
///
///   out = conv2(mid(conv1(entry(x)))) + shortcut(x)
///
/// x and out live in the accumulator domain. The shortcut is either x itself
/// or a strided 1x1 convolution over entry(x).
struct ResidualBlock {
  ActNode entry;
  MacNode conv1;
  ActNode mid;
  MacNode conv2;
  std::optional<MacNode> shortcut;
};

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  bool quantized = false;
  MacNode mac;        ///< conv, fc
  ActNode act;        ///< act_quant
  std::int64_t pool_window = 2;
  std::int64_t pool_stride = 2;
  std::optional<ResidualBlock> block;
};

struct ModelGraph {
  std::string arch;
  Shape4 input{1, 1, 1, 1};  ///< per-sample shape, n = 1
  int input_bits = 4;        ///< inputs are unsigned levels of this width
  QuantConfig quant{};
  std::vector<LayerSpec> layers;
  LayerStats logit_stats;    ///< scale of the classifier output, used by the loss
};

/// Indices of the layers the gradual schedule steps through (conv, fc and
/// residual blocks, in order).
std::vector<std::size_t> stage_units(const ModelGraph& model);

/// Number of quantized stage units; throws if they are not a prefix.
std::size_t quantized_prefix(const ModelGraph& model);

bool fully_quantized(const ModelGraph& model);

/// Output shape (n = 1) after every layer. Validates the chain as it goes.
std::vector<Shape4> layer_output_shapes(const ModelGraph& model);

/// Structural checks: shapes chain, activations follow MAC layers, residual
/// blocks are consistent, act flags mirror their producer.
void validate(const ModelGraph& model);

/// Computes integer weights and threshold tables for every quantized layer
/// from the master weights and running statistics. Non-quantized layers lose
/// any stale frozen state.
void freeze_quantization(ModelGraph& model);

std::int64_t parameter_count(const ModelGraph& model);

/// Invokes fn(MacNode&, name) on every weight-bearing node.
template <class Model, class Fn>
void for_each_mac(Model& model, Fn&& fn) {
  for (auto& layer : model.layers) {
    if (layer.kind == LayerKind::conv || layer.kind == LayerKind::fc) {
      fn(layer.mac, layer.name);
    } else if (layer.kind == LayerKind::residual_block) {
      fn(layer.block->conv1, layer.name + ".conv1");
      fn(layer.block->conv2, layer.name + ".conv2");
      if (layer.block->shortcut) fn(*layer.block->shortcut, layer.name + ".shortcut");
    }
  }
}

/// Invokes fn(ActNode&, name) on every threshold activation.
template <class Model, class Fn>
void for_each_act(Model& model, Fn&& fn) {
  for (auto& layer : model.layers) {
    if (layer.kind == LayerKind::act_quant) {
      fn(layer.act, layer.name);
    } else if (layer.kind == LayerKind::residual_block) {
      fn(layer.block->entry, layer.name + ".entry");
      fn(layer.block->mid, layer.name + ".mid");
    }
  }
}

}  // namespace kquant
