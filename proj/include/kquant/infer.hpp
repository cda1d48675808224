// SPDX-License-Identifier: Apache-2.0
//
// Integer-only execution of a frozen, fully quantized graph, plus the static
// range and hardware-cost analyses.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kquant/model.hpp"

namespace kquant {

enum class ValueDomain { level, accumulator };

std::string_view to_string(ValueDomain d);

/// One residual addition observed during execution, with the domain of each
/// addend.
struct AddEvent {
  std::string layer;
  ValueDomain lhs = ValueDomain::accumulator;
  ValueDomain rhs = ValueDomain::accumulator;
  std::int64_t lhs_max = 0;  ///< largest |value| seen per addend
  std::int64_t rhs_max = 0;
};

/// Counters filled by the executor in checked mode. The executor has no
/// floating-point code path, so fractional_ops is a structural zero; the range
/// counters verify every level and MAC against its declared bound.
struct IntegerAudit {
  std::uint64_t macs = 0;
  std::uint64_t comparisons = 0;
  std::uint64_t additions = 0;
  std::uint64_t fractional_ops = 0;
  std::uint64_t range_violations = 0;
  std::uint64_t max_level_seen = 0;
  std::int64_t max_mac_seen = 0;
  std::vector<AddEvent> residual_adds;

  bool mixed_domain_adds() const;
};

/// Runs a fully quantized model on integer input levels and returns the
/// classifier's accumulator-domain logits (n x classes x 1 x 1). Pass an audit
/// to enable checked mode.
///
/// Throws ModelStateError if any layer is full precision or lacks frozen
/// integer state, DomainError if an input level exceeds the input width.
TensorI execute_graph(const ModelGraph& model, const TensorI& input, IntegerAudit* audit = nullptr);

/// Argmax per row of an n x classes logit tensor; ties go to the lower index.
std::vector<std::int64_t> argmax_classes(const TensorI& logits);

/// Modified basic block: input and output are accumulator-domain tensors; the
/// activation that used to follow the add now sits at the block entry.
TensorI residual_block_forward(const TensorI& x_acc, const LayerSpec& block,
                               IntegerAudit* audit = nullptr);

/// Unmodified ordering for comparison: x is an activation-level tensor, the
/// shortcut adds those levels to conv2's MAC and `post` quantizes the sum.
/// Returns levels.
TensorI residual_block_forward_original(const TensorI& x_levels, const LayerSpec& block,
                                        const ThresholdTable& post,
                                        IntegerAudit* audit = nullptr);

/// Elementwise quantize_activation over a tensor.
TensorI apply_thresholds(const TensorI& x, const ThresholdTable& table, IntegerAudit* audit = nullptr);

struct RangeRow {
  std::string name;
  std::string kind;  ///< conv, fc, maxpool, residual_add
  int b_in = 0;      ///< bit width of the levels feeding the row
  int b_w = 0;
  std::int64_t in_ch = 0;
  std::int64_t kernel = 0;
  std::int64_t fan_in = 0;
  std::int64_t m_a = 0;  ///< largest input level, 2^b_in - 1
  std::int64_t m_m = 0;  ///< largest |output|
  int acc_bits = 0;      ///< signed width that holds +-m_m
  bool feeds_activation = false;
  Shape4 out{};
};

struct RangeReport {
  std::vector<RangeRow> rows;
  std::int64_t max_m_m = 0;
  int max_acc_bits = 0;
};

/// Signed bits needed for values in [-m, m].
int accumulator_bits(std::int64_t m);

/// Worst-case bounds per hardware row. Threshold activations are folded into
/// the row that produces their input, so the VGG-like model reports 11 rows.
RangeReport analyze_ranges(const ModelGraph& model);

struct HwRow {
  std::string name;
  std::string kind;
  std::int64_t units = 1;  ///< replicated units (output positions when parallel)
  std::int64_t comparators = 0;
  std::int64_t comparator_width = 0;
  std::int64_t mux_count = 0;
  std::int64_t adder_bits = 0;
};

struct HwCost {
  bool parallel = false;
  std::vector<HwRow> rows;
  std::int64_t total_comparators = 0;
  std::int64_t total_mux = 0;
  std::int64_t total_adder_bits = 0;
};

/// Resource counts for the threshold datapath. Per processing unit by
/// default: each activation unit has 2^b_a - 1 comparators of accumulator
/// width and one level encoder; each MAC row has one accumulator. With
/// `parallel`, counts are multiplied by the number of output positions.
HwCost estimate_hw_cost(const ModelGraph& model, bool parallel = false);

}  // namespace kquant
