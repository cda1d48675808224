// SPDX-License-Identifier: Apache-2.0
#include "kquant/model.hpp"

#include <string>

#include "kquant/error.hpp"

namespace kquant {
namespace {

enum class Domain { level, accumulator };

void check_weights(const MacNode& mac, const std::string& name) {
  validate(mac.spec);
  if (!(mac.weights.shape() == mac.spec.weight_shape())) {
    throw ShapeError(name + ": weight shape " + to_string(mac.weights.shape()) +
                     " does not match spec " + to_string(mac.spec.weight_shape()));
  }
}

Shape4 block_output_shape(const ResidualBlock& b, const Shape4& in, const std::string& name) {
  check_weights(b.conv1, name + ".conv1");
  check_weights(b.conv2, name + ".conv2");
  if (b.conv1.spec.in_ch != in.c) throw ShapeError(name + ": conv1 input channels mismatch");
  if (b.conv2.spec.in_ch != b.conv1.spec.out_ch) {
    throw ShapeError(name + ": conv2 input channels mismatch");
  }
  const Shape4 mid = conv_output_shape(in, b.conv1.spec);
  const Shape4 out = conv_output_shape(mid, b.conv2.spec);
  if (b.shortcut) {
    check_weights(*b.shortcut, name + ".shortcut");
    if (b.shortcut->spec.in_ch != in.c) throw ShapeError(name + ": shortcut input channels mismatch");
    if (!(conv_output_shape(in, b.shortcut->spec) == out)) {
      throw ShapeError(name + ": shortcut output shape does not match conv2 output");
    }
  } else if (!(in == out)) {
    throw ShapeError(name + ": identity shortcut needs matching shapes, got " + to_string(in) +
                     " -> " + to_string(out));
  }
  return out;
}

bool is_unit(LayerKind k) {
  return k == LayerKind::conv || k == LayerKind::fc || k == LayerKind::residual_block;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::fc:
      return "fc";
    case LayerKind::maxpool:
      return "maxpool";
    case LayerKind::act_quant:
      return "act_quant";
    case LayerKind::residual_block:
      return "residual_block";
  }
  return "conv";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::conv, LayerKind::fc, LayerKind::maxpool, LayerKind::act_quant,
                      LayerKind::residual_block}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::vector<std::size_t> stage_units(const ModelGraph& model) {
  std::vector<std::size_t> units;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (is_unit(model.layers[i].kind)) units.push_back(i);
  }
  return units;
}

std::size_t quantized_prefix(const ModelGraph& model) {
  std::size_t count = 0;
  bool gap = false;
  for (std::size_t idx : stage_units(model)) {
    if (model.layers[idx].quantized) {
      if (gap) {
        throw ModelStateError("quantized layers are not a prefix: " + model.layers[idx].name +
                              " is quantized after a full-precision layer");
      }
      ++count;
    } else {
      gap = true;
    }
  }
  return count;
}

bool fully_quantized(const ModelGraph& model) {
  return quantized_prefix(model) == stage_units(model).size();
}

std::vector<Shape4> layer_output_shapes(const ModelGraph& model) {
  std::vector<Shape4> shapes;
  Shape4 cur = model.input;
  cur.n = 1;
  Domain domain = Domain::level;
  const LayerSpec* producer = nullptr;
  for (const auto& layer : model.layers) {
    const std::string& name = layer.name;
    switch (layer.kind) {
      case LayerKind::conv:
        if (domain != Domain::level) throw ShapeError(name + ": conv needs activation levels as input");
        check_weights(layer.mac, name);
        if (layer.mac.spec.in_ch != cur.c) throw ShapeError(name + ": input channel mismatch");
        cur = conv_output_shape(cur, layer.mac.spec);
        domain = Domain::accumulator;
        break;
      case LayerKind::fc:
        if (domain != Domain::level) throw ShapeError(name + ": fc needs activation levels as input");
        check_weights(layer.mac, name);
        if (layer.mac.spec.kernel != 1 || layer.mac.spec.in_ch != cur.per_sample()) {
          throw ShapeError(name + ": fc expects " + std::to_string(cur.per_sample()) + " inputs");
        }
        cur = {1, layer.mac.spec.out_ch, 1, 1};
        domain = Domain::accumulator;
        break;
      case LayerKind::maxpool:
        if (domain != Domain::level) throw ShapeError(name + ": maxpool needs activation levels");
        cur = pool_output_shape(cur, layer.pool_window, layer.pool_stride);
        break;
      case LayerKind::act_quant:
        if (domain != Domain::accumulator || producer == nullptr) {
          throw ShapeError(name + ": activation must follow a MAC-producing layer");
        }
        if (layer.quantized != producer->quantized) {
          throw ModelStateError(name + ": quantization flag differs from producer " + producer->name);
        }
        domain = Domain::level;
        break;
      case LayerKind::residual_block:
        if (domain != Domain::accumulator) {
          throw ShapeError(name + ": residual block needs an accumulator-domain input");
        }
        if (!layer.block) throw ShapeError(name + ": residual block has no body");
        cur = block_output_shape(*layer.block, cur, name);
        break;
    }
    if (is_unit(layer.kind)) producer = &layer;
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const ModelGraph& model) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  validate(model.quant);
  if (model.input_bits < 1 || model.input_bits > 16) throw ShapeError("input_bits out of range");
  layer_output_shapes(model);
  if (model.layers.back().kind != LayerKind::fc) {
    throw ShapeError("the last layer must be the fc classifier");
  }
  quantized_prefix(model);
}

void freeze_quantization(ModelGraph& model) {
  const QuantConfig& q = model.quant;
  auto freeze_mac = [&](MacNode& mac, bool on) {
    mac.qweights.reset();
    if (on) mac.qweights = quantize_weights(mac.weights, q.b_w, q.rounding);
  };
  auto freeze_act = [&](ActNode& act, bool on, const std::string& name) {
    act.table.reset();
    if (!on) return;
    if (act.stats.count == 0) {
      throw ModelStateError(name + ": no activation statistics recorded");
    }
    act.table = build_threshold_table(act.stats.gauss(), q.b_a, q.rounding);
  };
  for (auto& layer : model.layers) {
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        freeze_mac(layer.mac, layer.quantized);
        break;
      case LayerKind::act_quant:
        freeze_act(layer.act, layer.quantized, layer.name);
        break;
      case LayerKind::residual_block: {
        auto& b = *layer.block;
        freeze_act(b.entry, layer.quantized, layer.name + ".entry");
        freeze_mac(b.conv1, layer.quantized);
        freeze_act(b.mid, layer.quantized, layer.name + ".mid");
        freeze_mac(b.conv2, layer.quantized);
        if (b.shortcut) freeze_mac(*b.shortcut, layer.quantized);
        break;
      }
      case LayerKind::maxpool:
        break;
    }
  }
}

std::int64_t parameter_count(const ModelGraph& model) {
  std::int64_t total = 0;
  for_each_mac(model, [&](const MacNode& mac, const std::string&) {
    total += mac.spec.weight_shape().size();
  });
  return total;
}

}  // namespace kquant
