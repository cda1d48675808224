// SPDX-License-Identifier: Apache-2.0
//
// Quantization-aware training.
//
// A full-precision layer uses the smooth activation
//     y = max(0, S * (F(x) - Z)),   S = 2^b_a / (1 - Z)
// with F the normal CDF of its running MAC statistics, and its exact
// derivative. A quantized layer replaces it by the threshold table of the same
// statistics and uses the straight-through estimator y' = pdf(x) * S in the
// backward pass (S = 1 in paper-literal mode), zeroed where x <= 0 unless
// ste_zero_gate is off. Weights of a quantized layer are the integer CDF
// quantization of the master weights; gradients reach the master copy through
// pdf(w) * 2^b_w. A full-precision layer uses the same transform without
// rounding or clamping, (F(w) - 0.5) * 2^b_w, and its exact gradient.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kquant/dataset.hpp"
#include "kquant/model.hpp"

namespace kquant {

enum class SteScaling { level_scaled, paper_literal };

std::string_view to_string(SteScaling s);
SteScaling ste_scaling_from_string(std::string_view name);

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs_per_stage = 2;
  int float_epochs = 0;  ///< full-precision epochs before the first stage advance
  int batch_size = 32;
  QuantConfig quant{};
  SteScaling ste_scaling = SteScaling::level_scaled;
  bool ste_zero_gate = true;  ///< zero the activation STE where x <= 0, where every level is 0
  std::uint64_t seed = 1;
  std::optional<std::size_t> final_stage;  ///< defaults to every stage unit
  double logit_scale = 2.0;  ///< loss sees logits * logit_scale / running logit stddev
  double stats_momentum = 0.1;
  double grad_clip = 0.0;  ///< cap on the global L2 norm of the weight gradients; 0 disables
};

void validate(const TrainConfig& cfg);

struct StageSchedule {
  std::size_t stage = 0;
  std::size_t total = 0;
};

/// Fake-quantized activation: builds the table from `stats` and emits levels.
TensorR cdf_act_forward(const TensorR& x, const LayerStats& stats, const QuantConfig& cfg);

/// upstream * pdf(x; stats) * S
TensorR cdf_act_backward(const TensorR& upstream, const TensorR& x, const LayerStats& stats,
                         const QuantConfig& cfg, SteScaling scaling = SteScaling::level_scaled);

/// upstream * pdf(w; params) * 2^b_w, zero where (F(w) - 0.5) * 2^b_w lies
/// outside the clamp range +-(2^(b_w-1) - 1).
TensorR ste_weight_backward(const TensorR& upstream, const TensorR& w, const GaussParams& params,
                            int b_w);

/// EMA update with population moments of the batch; the first batch
/// initializes the estimate directly.
LayerStats update_stats(LayerStats stats, const TensorR& batch_mac);

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
void sgd_step(TensorR& params, TensorR& velocity, const TensorR& grads, const TrainConfig& cfg);

/// Quantizes stage unit `schedule.stage` (weights and its activation). Running
/// statistics carry over, since full-precision and quantized layers share one
/// scale. At the last stage this is a no-op with a warning on stderr.
StageSchedule advance_stage(StageSchedule schedule, ModelGraph& model);

/// Sets the first `stage` units quantized and the rest full precision.
void set_stage(ModelGraph& model, std::size_t stage);

/// Training-path forward in evaluation mode (running statistics, no update).
/// On a fully quantized model and integer input this reproduces
/// execute_graph exactly.
TensorR forward_eval(const ModelGraph& model, const TensorR& input);

struct BatchGradients {
  double loss = 0.0;
  std::int64_t correct = 0;
  std::vector<TensorR> weight_grads;  ///< master-weight gradients in for_each_mac order
};

/// Loss and weight gradients for one batch. With `update` the running
/// statistics absorb the batch first (training mode); without it the model is
/// left untouched, so the result is a pure function of the weights.
BatchGradients compute_gradients(ModelGraph& model, const TensorR& input,
                                 std::span<const std::int32_t> labels, const TrainConfig& cfg,
                                 bool update);

struct LayerStatsRecord {
  std::string name;
  LayerStats stats;
};

struct EpochRecord {
  std::size_t stage = 0;
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::vector<LayerStatsRecord> layers;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  StageSchedule schedule;
};

/// Runs float_epochs at the model's current stage, then epochs_per_stage
/// epochs for every following stage up to final_stage, and freezes the
/// quantized state at the end. Deterministic given cfg.seed.
/// Throws DivergenceError on a non-finite loss.
TrainResult train_model(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Top-1 accuracy of the training-path forward on a split.
double evaluate_accuracy(const ModelGraph& model, const Dataset& data, const Split& split,
                         std::size_t batch_size = 100);

/// Runs forward passes in training mode without updating weights, so the
/// running statistics settle. Used before post-hoc quantization.
void calibrate_stats(ModelGraph& model, const Dataset& data, std::size_t batches,
                     std::size_t batch_size, std::uint64_t seed);

}  // namespace kquant
