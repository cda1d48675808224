// SPDX-License-Identifier: Apache-2.0
#include "kquant/zoo.hpp"

#include <cmath>
#include <string>

#include "kquant/error.hpp"
#include "kquant/rng.hpp"

namespace kquant {
namespace {

MacNode make_mac(const ConvSpec& spec, Rng& rng) {
  MacNode mac;
  mac.spec = spec;
  mac.weights = TensorR(spec.weight_shape());
  const double sd = std::sqrt(2.0 / static_cast<double>(spec.fan_in()));
  for (double& v : mac.weights.data()) v = rng.normal(0.0, sd);
  // Layer inputs are non-negative levels and there is no bias, so a filter
  // with a nonzero sum starts with a large constant offset. Centre each one.
  const auto per = static_cast<std::size_t>(spec.fan_in());
  if (per > 1) {
    auto w = mac.weights.data();
    for (std::size_t o = 0; o < w.size(); o += per) {
      double mean = 0.0;
      for (std::size_t i = 0; i < per; ++i) mean += w[o + i];
      mean /= static_cast<double>(per);
      for (std::size_t i = 0; i < per; ++i) w[o + i] -= mean;
    }
  }
  return mac;
}

ConvSpec conv3(std::int64_t out, std::int64_t in, std::int64_t stride = 1) {
  return {out, in, 3, stride, 1};
}

class Builder {
 public:
  Builder(std::string arch, Shape4 input, const QuantConfig& quant, std::uint64_t seed)
      : rng_(seed) {
    validate(quant);
    model_.arch = std::move(arch);
    model_.input = input;
    model_.input.n = 1;
    model_.input_bits = quant.b_a;
    model_.quant = quant;
    cur_ = model_.input;
  }

  void conv(const std::string& name, std::int64_t out, bool act = true) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = name;
    l.mac = make_mac(conv3(out, cur_.c), rng_);
    cur_ = conv_output_shape(cur_, l.mac.spec);
    model_.layers.push_back(std::move(l));
    if (act) this->act("act" + std::to_string(++acts_));
  }

  void fc(const std::string& name, std::int64_t out, bool act) {
    LayerSpec l;
    l.kind = LayerKind::fc;
    l.name = name;
    l.mac = make_mac({out, cur_.per_sample(), 1, 1, 0}, rng_);
    cur_ = {1, out, 1, 1};
    model_.layers.push_back(std::move(l));
    if (act) this->act("act" + std::to_string(++acts_));
  }

  void act(const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::act_quant;
    l.name = name;
    model_.layers.push_back(std::move(l));
  }

  void pool(const std::string& name, std::int64_t window) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.name = name;
    l.pool_window = window;
    l.pool_stride = window;
    cur_ = pool_output_shape(cur_, window, window);
    model_.layers.push_back(std::move(l));
  }

  void block(const std::string& name, std::int64_t out, std::int64_t stride) {
    LayerSpec l;
    l.kind = LayerKind::residual_block;
    l.name = name;
    ResidualBlock b;
    b.conv1 = make_mac(conv3(out, cur_.c, stride), rng_);
    b.conv2 = make_mac(conv3(out, out), rng_);
    if (stride != 1 || out != cur_.c) {
      b.shortcut = make_mac({out, cur_.c, 1, stride, 0}, rng_);
    }
    cur_ = conv_output_shape(conv_output_shape(cur_, b.conv1.spec), b.conv2.spec);
    l.block = std::move(b);
    model_.layers.push_back(std::move(l));
  }

  ModelGraph finish() {
    validate(model_);
    return std::move(model_);
  }

 private:
  ModelGraph model_;
  Rng rng_;
  Shape4 cur_;
  int acts_ = 0;
};

}  // namespace

ModelGraph build_vgg_like(int num_classes, const QuantConfig& quant, std::uint64_t seed,
                          Shape4 input) {
  Builder b("vgg_like", input, quant, seed);
  b.conv("conv1", 128);
  b.conv("conv2", 128);
  b.pool("pool1", 2);
  b.conv("conv3", 256);
  b.conv("conv4", 256);
  b.pool("pool2", 2);
  b.conv("conv5", 512);
  b.conv("conv6", 512);
  b.pool("pool3", 2);
  b.fc("fc1", 1024, true);
  b.fc("fc2", num_classes, false);
  return b.finish();
}

ResNetOptions resnet18_options(int num_classes) {
  ResNetOptions o;
  o.stages = 4;
  o.blocks_per_stage = 2;
  o.base_width = 64;
  o.num_classes = num_classes;
  o.input = {1, 3, 32, 32};
  o.final_pool = 4;
  return o;
}

ModelGraph build_resnet_small(const ResNetOptions& opts, const QuantConfig& quant,
                              std::uint64_t seed) {
  if (opts.stages < 1 || opts.blocks_per_stage < 1) {
    throw ConfigError("resnet needs at least one stage and one block per stage");
  }
  Builder b(opts.stages == 4 && opts.blocks_per_stage == 2 ? "resnet18" : "resnet_small",
            opts.input, quant, seed);
  b.conv("stem", opts.base_width, false);
  std::int64_t width = opts.base_width;
  int index = 0;
  for (int s = 0; s < opts.stages; ++s) {
    for (int k = 0; k < opts.blocks_per_stage; ++k) {
      const bool down = s > 0 && k == 0;
      if (down) width *= 2;
      b.block("block" + std::to_string(++index), width, down ? 2 : 1);
    }
  }
  b.act("act_out");
  b.pool("pool", opts.final_pool);
  b.fc("fc", opts.num_classes, false);
  return b.finish();
}

ModelGraph build_small_conv(int num_classes, const QuantConfig& quant, std::uint64_t seed,
                            Shape4 input, std::vector<std::int64_t> widths) {
  if (widths.size() != 2) throw ConfigError("small_conv takes exactly two widths");
  Builder b("small_conv", input, quant, seed);
  b.conv("conv1", widths[0]);
  b.pool("pool1", 2);
  b.conv("conv2", widths[1]);
  b.pool("pool2", 2);
  b.fc("fc", num_classes, false);
  return b.finish();
}

ModelGraph build_model(std::string_view arch, int num_classes, const QuantConfig& quant,
                       std::uint64_t seed, Shape4 input) {
  if (arch == "vgg_like") return build_vgg_like(num_classes, quant, seed, input);
  if (arch == "small_conv") return build_small_conv(num_classes, quant, seed, input);
  if (arch == "resnet_small") {
    ResNetOptions o;
    o.num_classes = num_classes;
    o.input = input;
    return build_resnet_small(o, quant, seed);
  }
  if (arch == "resnet18") {
    ResNetOptions o = resnet18_options(num_classes);
    o.input = input;
    return build_resnet_small(o, quant, seed);
  }
  throw ConfigError("unknown architecture '" + std::string(arch) + "'");
}

}  // namespace kquant
