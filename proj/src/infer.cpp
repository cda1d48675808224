// SPDX-License-Identifier: Apache-2.0
#include "kquant/infer.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "kquant/error.hpp"

namespace kquant {
namespace {

// (2^b_in - 1)(2^(b_w-1) - 1) * fan_in without the activation-width limit of
// max_mac, since the model input may be wider than 8 bits.
std::int64_t mac_bound(int b_in, int b_w, std::int64_t fan_in) {
  std::int64_t out = 0;
  const std::int64_t per_tap = ((std::int64_t{1} << b_in) - 1) * max_weight(b_w);
  if (__builtin_mul_overflow(per_tap, fan_in, &out)) {
    throw OverflowError("MAC bound overflows int64");
  }
  return out;
}

const QuantizedWeights& frozen_weights(const MacNode& mac, const std::string& name) {
  if (!mac.qweights) {
    throw ModelStateError(name + ": quantized layer has no frozen integer weights");
  }
  return *mac.qweights;
}

const ThresholdTable& frozen_table(const ActNode& act, const std::string& name) {
  if (!act.table) {
    throw ModelStateError(name + ": quantized activation has no threshold table");
  }
  return *act.table;
}

void note_macs(IntegerAudit* audit, const TensorI& out, std::int64_t fan_in, std::int64_t bound) {
  if (audit == nullptr) return;
  audit->macs += out.size() * static_cast<std::uint64_t>(fan_in);
  for (std::int64_t v : out.data()) {
    const std::int64_t a = v < 0 ? -v : v;
    audit->max_mac_seen = std::max(audit->max_mac_seen, a);
    if (a > bound) ++audit->range_violations;
  }
}

struct BlockResult {
  TensorI out;
  std::int64_t bound = 0;
};

TensorI run_mac(const MacNode& mac, const TensorI& x, bool fc, const std::string& name) {
  const QuantizedWeights& q = frozen_weights(mac, name);
  return fc ? linear_int(x, q.values) : conv2d_int(x, q.values, mac.spec);
}

BlockResult block_forward(const TensorI& x_acc, std::int64_t in_bound, const LayerSpec& layer,
                          IntegerAudit* audit) {
  const ResidualBlock& b = *layer.block;
  const std::string& name = layer.name;
  const ThresholdTable& entry_t = frozen_table(b.entry, name + ".entry");
  const ThresholdTable& mid_t = frozen_table(b.mid, name + ".mid");

  const TensorI entry = apply_thresholds(x_acc, entry_t, audit);
  const TensorI h1 = run_mac(b.conv1, entry, false, name + ".conv1");
  const std::int64_t h1_bound = mac_bound(entry_t.b_a, b.conv1.qweights->b_w, b.conv1.spec.fan_in());
  note_macs(audit, h1, b.conv1.spec.fan_in(), h1_bound);

  const TensorI mid = apply_thresholds(h1, mid_t, audit);
  const TensorI h2 = run_mac(b.conv2, mid, false, name + ".conv2");
  const std::int64_t h2_bound = mac_bound(mid_t.b_a, b.conv2.qweights->b_w, b.conv2.spec.fan_in());
  note_macs(audit, h2, b.conv2.spec.fan_in(), h2_bound);

  TensorI shortcut;
  std::int64_t sc_bound = in_bound;
  if (b.shortcut) {
    shortcut = run_mac(*b.shortcut, entry, false, name + ".shortcut");
    sc_bound = mac_bound(entry_t.b_a, b.shortcut->qweights->b_w, b.shortcut->spec.fan_in());
    note_macs(audit, shortcut, b.shortcut->spec.fan_in(), sc_bound);
  } else {
    shortcut = x_acc;
  }

  BlockResult r;
  r.out = add_checked(h2, shortcut);
  r.bound = h2_bound + sc_bound;
  if (audit != nullptr) {
    audit->additions += r.out.size();
    audit->residual_adds.push_back(
        {name, ValueDomain::accumulator, ValueDomain::accumulator, max_abs(h2), max_abs(shortcut)});
    for (std::int64_t v : r.out.data()) {
      if ((v < 0 ? -v : v) > r.bound) ++audit->range_violations;
    }
  }
  return r;
}

void require_levels(const TensorI& x, int bits, const char* what) {
  const std::int64_t hi = (std::int64_t{1} << bits) - 1;
  for (std::int64_t v : x.data()) {
    if (v < 0 || v > hi) {
      throw DomainError(std::string(what) + " value " + std::to_string(v) + " does not fit " +
                        std::to_string(bits) + " unsigned bits");
    }
  }
}

}  // namespace

std::string_view to_string(ValueDomain d) {
  return d == ValueDomain::level ? "level" : "accumulator";
}

bool IntegerAudit::mixed_domain_adds() const {
  return std::any_of(residual_adds.begin(), residual_adds.end(),
                     [](const AddEvent& e) { return e.lhs != e.rhs; });
}

TensorI apply_thresholds(const TensorI& x, const ThresholdTable& table, IntegerAudit* audit) {
  TensorI out(x.shape());
  const std::int64_t top = table.levels() - 1;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = quantize_activation(x[i], table);
  if (audit != nullptr) {
    audit->comparisons += x.size() * static_cast<std::uint64_t>(top);
    for (std::int64_t v : out.data()) {
      if (v < 0 || v > top) ++audit->range_violations;
      audit->max_level_seen = std::max<std::uint64_t>(audit->max_level_seen, static_cast<std::uint64_t>(v));
    }
  }
  return out;
}

TensorI execute_graph(const ModelGraph& model, const TensorI& input, IntegerAudit* audit) {
  validate(model);
  for (std::size_t idx : stage_units(model)) {
    if (!model.layers[idx].quantized) {
      throw ModelStateError("layer " + model.layers[idx].name +
                            " is full precision; integer execution refused");
    }
  }
  const Shape4& s = input.shape();
  if (s.c != model.input.c || s.h != model.input.h || s.w != model.input.w) {
    throw ShapeError("input shape " + to_string(s) + " does not match model input " +
                     to_string(model.input));
  }
  require_levels(input, model.input_bits, "input");

  TensorI cur = input;
  int b_in = model.input_bits;
  std::int64_t acc_bound = 0;
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::fc: {
        const bool fc = layer.kind == LayerKind::fc;
        cur = run_mac(layer.mac, cur, fc, layer.name);
        const std::int64_t fan_in = layer.mac.spec.fan_in();
        acc_bound = mac_bound(b_in, layer.mac.qweights->b_w, fan_in);
        note_macs(audit, cur, fan_in, acc_bound);
        break;
      }
      case LayerKind::act_quant: {
        const ThresholdTable& t = frozen_table(layer.act, layer.name);
        cur = apply_thresholds(cur, t, audit);
        b_in = t.b_a;
        break;
      }
      case LayerKind::maxpool:
        cur = maxpool2d(cur, layer.pool_window, layer.pool_stride);
        if (audit != nullptr) {
          audit->comparisons +=
              cur.size() * static_cast<std::uint64_t>(layer.pool_window * layer.pool_window - 1);
        }
        break;
      case LayerKind::residual_block: {
        BlockResult r = block_forward(cur, acc_bound, layer, audit);
        cur = std::move(r.out);
        acc_bound = r.bound;
        break;
      }
    }
  }
  return cur;
}

std::vector<std::int64_t> argmax_classes(const TensorI& logits) {
  const std::int64_t n = logits.shape().n, k = logits.shape().per_sample();
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(static_cast<std::size_t>(i * k), static_cast<std::size_t>(k));
    out[static_cast<std::size_t>(i)] = std::max_element(row.begin(), row.end()) - row.begin();
  }
  return out;
}

TensorI residual_block_forward(const TensorI& x_acc, const LayerSpec& block,
                               IntegerAudit* audit) {
  if (block.kind != LayerKind::residual_block || !block.block) {
    throw ShapeError(block.name + " is not a residual block");
  }
  return block_forward(x_acc, max_abs(x_acc), block, audit).out;
}

TensorI residual_block_forward_original(const TensorI& x_levels, const LayerSpec& block,
                                        const ThresholdTable& post,
                                        IntegerAudit* audit) {
  if (block.kind != LayerKind::residual_block || !block.block) {
    throw ShapeError(block.name + " is not a residual block");
  }
  const ResidualBlock& b = *block.block;
  const std::string& name = block.name;
  const ThresholdTable& mid_t = frozen_table(b.mid, name + ".mid");
  const TensorI h1 = run_mac(b.conv1, x_levels, false, name + ".conv1");
  if (audit != nullptr) audit->macs += h1.size() * static_cast<std::uint64_t>(b.conv1.spec.fan_in());
  const TensorI mid = apply_thresholds(h1, mid_t, audit);
  const TensorI h2 = run_mac(b.conv2, mid, false, name + ".conv2");
  if (audit != nullptr) audit->macs += h2.size() * static_cast<std::uint64_t>(b.conv2.spec.fan_in());

  TensorI shortcut = b.shortcut ? run_mac(*b.shortcut, x_levels, false, name + ".shortcut") : x_levels;
  const ValueDomain rhs = b.shortcut ? ValueDomain::accumulator : ValueDomain::level;
  const TensorI sum = add_checked(h2, shortcut);
  if (audit != nullptr) {
    audit->additions += sum.size();
    audit->residual_adds.push_back({name, ValueDomain::accumulator, rhs, max_abs(h2), max_abs(shortcut)});
  }
  return apply_thresholds(sum, post, audit);
}

int accumulator_bits(std::int64_t m) {
  return static_cast<int>(std::bit_width(static_cast<std::uint64_t>(m < 0 ? -m : m))) + 1;
}

RangeReport analyze_ranges(const ModelGraph& model) {
  const auto shapes = layer_output_shapes(model);
  RangeReport rep;
  int b_in = model.input_bits;
  std::int64_t acc_bound = 0;
  std::size_t producer_row = 0;

  auto mac_row = [&](const std::string& name, const char* kind, const ConvSpec& spec, int bits,
                     Shape4 out) {
    RangeRow r;
    r.name = name;
    r.kind = kind;
    r.b_in = bits;
    r.b_w = model.quant.b_w;
    r.in_ch = spec.in_ch;
    r.kernel = spec.kernel;
    r.fan_in = spec.fan_in();
    r.m_a = (std::int64_t{1} << bits) - 1;
    r.m_m = mac_bound(bits, model.quant.b_w, r.fan_in);
    r.acc_bits = accumulator_bits(r.m_m);
    r.out = out;
    rep.rows.push_back(r);
    return rep.rows.size() - 1;
  };

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& layer = model.layers[li];
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        producer_row = mac_row(layer.name, layer.kind == LayerKind::conv ? "conv" : "fc",
                               layer.mac.spec, b_in, shapes[li]);
        acc_bound = rep.rows[producer_row].m_m;
        break;
      case LayerKind::act_quant:
        rep.rows[producer_row].feeds_activation = true;
        b_in = model.quant.b_a;
        break;
      case LayerKind::maxpool: {
        RangeRow r;
        r.name = layer.name;
        r.kind = "maxpool";
        r.b_in = b_in;
        r.kernel = layer.pool_window;
        r.in_ch = shapes[li].c;
        r.m_a = (std::int64_t{1} << b_in) - 1;
        r.m_m = r.m_a;
        r.acc_bits = b_in;
        r.out = shapes[li];
        rep.rows.push_back(r);
        break;
      }
      case LayerKind::residual_block: {
        const ResidualBlock& b = *layer.block;
        rep.rows[producer_row].feeds_activation = true;  // block entry
        const int ba = model.quant.b_a;
        const Shape4 mid_shape = conv_output_shape(li == 0 ? model.input : shapes[li - 1], b.conv1.spec);
        const std::size_t c1 = mac_row(layer.name + ".conv1", "conv", b.conv1.spec, ba, mid_shape);
        rep.rows[c1].feeds_activation = true;
        const std::size_t c2 = mac_row(layer.name + ".conv2", "conv", b.conv2.spec, ba, shapes[li]);
        std::int64_t sc_bound = acc_bound;
        if (b.shortcut) {
          sc_bound = rep.rows[mac_row(layer.name + ".shortcut", "conv", b.shortcut->spec, ba, shapes[li])].m_m;
        }
        RangeRow add;
        add.name = layer.name + ".add";
        add.kind = "residual_add";
        add.b_in = ba;
        add.m_a = (std::int64_t{1} << ba) - 1;
        add.m_m = rep.rows[c2].m_m + sc_bound;
        add.acc_bits = accumulator_bits(add.m_m);
        add.out = shapes[li];
        rep.rows.push_back(add);
        producer_row = rep.rows.size() - 1;
        acc_bound = add.m_m;
        break;
      }
    }
  }
  for (const auto& r : rep.rows) {
    rep.max_m_m = std::max(rep.max_m_m, r.m_m);
    rep.max_acc_bits = std::max(rep.max_acc_bits, r.acc_bits);
  }
  return rep;
}

HwCost estimate_hw_cost(const ModelGraph& model, bool parallel) {
  const RangeReport ranges = analyze_ranges(model);
  HwCost cost;
  cost.parallel = parallel;
  const std::int64_t act_comparators = max_level(model.quant.b_a);
  for (const RangeRow& r : ranges.rows) {
    HwRow h;
    h.name = r.name;
    h.kind = r.kind;
    h.units = parallel ? r.out.per_sample() : 1;
    if (r.kind == "maxpool") {
      h.comparators = (r.kernel * r.kernel - 1) * h.units;
      h.comparator_width = r.b_in;
      h.mux_count = h.units;
    } else {
      h.adder_bits = r.acc_bits * h.units;
      if (r.feeds_activation) {
        h.comparators = act_comparators * h.units;
        h.comparator_width = r.acc_bits;
        h.mux_count = h.units;
      }
    }
    cost.total_comparators += h.comparators;
    cost.total_mux += h.mux_count;
    cost.total_adder_bits += h.adder_bits;
    cost.rows.push_back(h);
  }
  return cost;
}

}  // namespace kquant
