// SPDX-License-Identifier: Apache-2.0
#include "kquant/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <type_traits>

#include "kquant/autodiff.hpp"
#include "kquant/error.hpp"
#include "kquant/rng.hpp"

namespace kquant {
namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

struct MacCache {
  TensorR input;
  TensorR w_eff;
  bool quantized = false;
  GaussParams wparams{};
  TensorR grad_w;
};

struct ActCache {
  TensorR input;
  GaussParams g{};
  double tail = 1.0;  // P(X > 0)
  bool quantized = false;
};

struct PoolCache {
  Shape4 in_shape{};
  std::vector<std::uint32_t> argmax;
};

struct BlockCache {
  ActCache entry;
  MacCache conv1;
  ActCache mid;
  MacCache conv2;
  MacCache shortcut;
};

struct LayerCache {
  MacCache mac;
  ActCache act;
  PoolCache pool;
  BlockCache block;
};

struct Context {
  QuantConfig quant;
  SteScaling ste = SteScaling::level_scaled;
  bool ste_zero_gate = true;
  double stats_momentum = 0.1;
  bool train = false;
};

// Distribution used by a full-precision activation. Falls back to a unit
// spread before any statistics exist or when the stream is constant.
GaussParams surrogate_params(const LayerStats& s) {
  const double floor = 1e-9 * std::max(1.0, std::fabs(s.mu));
  if (s.count == 0) return {0.0, 1.0};
  return {s.mu, std::max(s.sigma, floor)};
}

// Full-precision layers run on the unrounded, unclamped weight transform
// (F(w) - 0.5) * 2^b_w, so they share the integer weights' scale and a stage
// flip only adds rounding error.
TensorR smooth_weights(const TensorR& w, const GaussParams& p, int b_w) {
  const double scale = std::ldexp(1.0, b_w);
  TensorR out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (normal_cdf(w[i], p) - 0.5) * scale;
  return out;
}

TensorR mac_forward(const MacNode& mac, bool quantized, bool fc, const TensorR& x,
                    const QuantConfig& q, MacCache* cache) {
  TensorR w_eff;
  GaussParams wparams{};
  if (quantized) {
    QuantizedWeights qw = quantize_weights(mac.weights, q.b_w, q.rounding);
    w_eff = to_real(qw.values);
    wparams = qw.params;
  } else {
    wparams = weight_moments(mac.weights);
    if (!(wparams.sigma > 0.0)) throw DegenerateError("weights have zero spread");
    w_eff = smooth_weights(mac.weights, wparams, q.b_w);
  }
  TensorR y = fc ? linear_real(x, w_eff) : conv2d_real(x, w_eff, mac.spec);
  if (cache != nullptr) {
    cache->input = x;
    cache->w_eff = std::move(w_eff);
    cache->quantized = quantized;
    cache->wparams = wparams;
  }
  return y;
}

TensorR mac_backward(const MacNode& mac, MacCache& c, bool fc, const TensorR& g, bool need_input,
                     int b_w) {
  TensorR gw = fc ? linear_real_backward_weight(g, c.input)
                  : conv2d_real_backward_weight(g, c.input, mac.spec);
  if (c.quantized) {
    c.grad_w = ste_weight_backward(gw, mac.weights, c.wparams, b_w);
  } else {
    // Exact gradient of w -> (F((w - mu_w) / sigma_w) - 0.5) * 2^b_w, including
    // the dependence of the moments on w.
    const double scale = std::ldexp(1.0, b_w);
    const double n = static_cast<double>(gw.size());
    std::vector<double> v(gw.size());
    double mean_g = 0.0, mean_gv = 0.0;
    for (std::size_t i = 0; i < gw.size(); ++i) {
      v[i] = (mac.weights[i] - c.wparams.mu) / c.wparams.sigma;
      gw[i] *= scale * kInvSqrt2Pi * std::exp(-0.5 * v[i] * v[i]);
      mean_g += gw[i];
      mean_gv += gw[i] * v[i];
    }
    mean_g /= n;
    mean_gv /= n;
    for (std::size_t i = 0; i < gw.size(); ++i) {
      gw[i] = (gw[i] - mean_g - v[i] * mean_gv) / c.wparams.sigma;
    }
    c.grad_w = std::move(gw);
  }
  if (!need_input) return {};
  return fc ? linear_real_backward_input(g, c.w_eff, c.input.shape())
            : conv2d_real_backward_input(g, c.w_eff, mac.spec, c.input.shape());
}

template <class Act>
TensorR act_forward(Act& node, bool quantized, const TensorR& x, const Context& ctx, ActCache* cache) {
  if constexpr (!std::is_const_v<Act>) {
    if (ctx.train) {
      node.stats.momentum_ema = ctx.stats_momentum;
      node.stats = update_stats(node.stats, x);
    }
  }
  TensorR y;
  GaussParams g{};
  double tail = 1.0;
  if (quantized) {
    if (node.stats.count == 0) throw ModelStateError("quantized activation has no statistics");
    g = node.stats.gauss();
    y = cdf_act_forward(x, node.stats, ctx.quant);
    tail = normal_sf(0.0, g);
  } else {
    g = surrogate_params(node.stats);
    tail = normal_sf(0.0, g);
    const double levels = std::ldexp(1.0, ctx.quant.b_a);
    y = TensorR(x.shape());
    if (tail > 0.0) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) y[i] = levels * (1.0 - normal_sf(x[i], g) / tail);
      }
    }
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->g = g;
    cache->tail = tail;
    cache->quantized = quantized;
  }
  return y;
}

TensorR act_backward(const ActCache& c, const TensorR& grad, const Context& ctx) {
  TensorR gx(c.input.shape());
  if (!(c.tail > 0.0)) return gx;
  const double levels = std::ldexp(1.0, ctx.quant.b_a);
  double scale = levels / c.tail;
  if (c.quantized && ctx.ste == SteScaling::paper_literal) scale = 1.0;
  const double inv_sigma = 1.0 / c.g.sigma;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double x = c.input[i];
    const double z = (x - c.g.mu) * inv_sigma;
    // Full precision: exact derivative of max(0, S * (F(x) - Z)). Quantized
    // layers share the gate unless ste_zero_gate is off.
    if ((!c.quantized || ctx.ste_zero_gate) && x <= 0.0) continue;
    gx[i] = grad[i] * scale * kInvSqrt2Pi * std::exp(-0.5 * z * z) * inv_sigma;
  }
  return gx;
}

void add_into(TensorR& a, const TensorR& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class Model>
TensorR run_forward(Model& model, const TensorR& input, const Context& ctx,
                    std::vector<LayerCache>* tape) {
  if (tape != nullptr) tape->resize(model.layers.size());
  TensorR cur = input;
  const QuantConfig& q = model.quant;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto& layer = model.layers[li];
    LayerCache* lc = tape != nullptr ? &(*tape)[li] : nullptr;
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        cur = mac_forward(layer.mac, layer.quantized, layer.kind == LayerKind::fc, cur, q,
                          lc ? &lc->mac : nullptr);
        break;
      case LayerKind::act_quant:
        cur = act_forward(layer.act, layer.quantized, cur, ctx, lc ? &lc->act : nullptr);
        break;
      case LayerKind::maxpool:
        if (lc != nullptr) {
          lc->pool.in_shape = cur.shape();
          cur = maxpool2d_argmax(cur, layer.pool_window, layer.pool_stride, lc->pool.argmax);
        } else {
          cur = maxpool2d(cur, layer.pool_window, layer.pool_stride);
        }
        break;
      case LayerKind::residual_block: {
        auto& b = *layer.block;
        BlockCache* bc = lc ? &lc->block : nullptr;
        const bool qz = layer.quantized;
        const TensorR a = act_forward(b.entry, qz, cur, ctx, bc ? &bc->entry : nullptr);
        const TensorR h = mac_forward(b.conv1, qz, false, a, q, bc ? &bc->conv1 : nullptr);
        const TensorR m = act_forward(b.mid, qz, h, ctx, bc ? &bc->mid : nullptr);
        TensorR y = mac_forward(b.conv2, qz, false, m, q, bc ? &bc->conv2 : nullptr);
        if (b.shortcut) {
          add_into(y, mac_forward(*b.shortcut, qz, false, a, q, bc ? &bc->shortcut : nullptr));
        } else {
          add_into(y, cur);
        }
        cur = std::move(y);
        break;
      }
    }
  }
  if constexpr (!std::is_const_v<Model>) {
    if (ctx.train) {
      model.logit_stats.momentum_ema = ctx.stats_momentum;
      model.logit_stats = update_stats(model.logit_stats, cur);
    }
  }
  return cur;
}

// Backpropagates `grad` (d loss / d logits) through the tape, leaving weight
// gradients in the mac caches.
void run_backward(const ModelGraph& model, std::vector<LayerCache>& tape, TensorR grad,
                  const Context& ctx) {
  const int b_w = model.quant.b_w;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerSpec& layer = model.layers[li];
    LayerCache& lc = tape[li];
    const bool need_input = li > 0;
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        grad = mac_backward(layer.mac, lc.mac, layer.kind == LayerKind::fc, grad, need_input, b_w);
        break;
      case LayerKind::act_quant:
        grad = act_backward(lc.act, grad, ctx);
        break;
      case LayerKind::maxpool:
        grad = maxpool2d_backward(grad, lc.pool.argmax, lc.pool.in_shape);
        break;
      case LayerKind::residual_block: {
        const ResidualBlock& b = *layer.block;
        BlockCache& bc = lc.block;
        const TensorR g_m = mac_backward(b.conv2, bc.conv2, false, grad, true, b_w);
        const TensorR g_h = act_backward(bc.mid, g_m, ctx);
        TensorR g_a = mac_backward(b.conv1, bc.conv1, false, g_h, true, b_w);
        if (b.shortcut) {
          add_into(g_a, mac_backward(*b.shortcut, bc.shortcut, false, grad, true, b_w));
          grad = act_backward(bc.entry, g_a, ctx);
        } else {
          TensorR g_x = act_backward(bc.entry, g_a, ctx);
          add_into(g_x, grad);
          grad = std::move(g_x);
        }
        break;
      }
    }
  }
}

// Weight-bearing nodes paired with their caches, in for_each_mac order.
std::vector<std::pair<MacNode*, MacCache*>> mac_slots(ModelGraph& model, std::vector<LayerCache>& tape) {
  std::vector<std::pair<MacNode*, MacCache*>> out;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    LayerSpec& layer = model.layers[li];
    if (layer.kind == LayerKind::conv || layer.kind == LayerKind::fc) {
      out.emplace_back(&layer.mac, &tape[li].mac);
    } else if (layer.kind == LayerKind::residual_block) {
      out.emplace_back(&layer.block->conv1, &tape[li].block.conv1);
      out.emplace_back(&layer.block->conv2, &tape[li].block.conv2);
      if (layer.block->shortcut) out.emplace_back(&*layer.block->shortcut, &tape[li].block.shortcut);
    }
  }
  return out;
}

std::vector<LayerStatsRecord> stats_snapshot(const ModelGraph& model) {
  std::vector<LayerStatsRecord> out;
  for_each_act(model, [&](const ActNode& act, const std::string& name) {
    out.push_back({name, act.stats});
  });
  out.push_back({"logits", model.logit_stats});
  return out;
}

Context make_context(const ModelGraph& model, const TrainConfig* cfg, bool train) {
  Context ctx;
  ctx.quant = model.quant;
  ctx.train = train;
  if (cfg != nullptr) {
    ctx.ste = cfg->ste_scaling;
    ctx.ste_zero_gate = cfg->ste_zero_gate;
    ctx.stats_momentum = cfg->stats_momentum;
  }
  return ctx;
}

BatchGradients gradients_impl(ModelGraph& model, const TensorR& x, std::span<const std::int32_t> labels,
                              const TrainConfig& cfg, const Context& ctx, std::vector<LayerCache>& tape) {
  const TensorR logits = run_forward(model, x, ctx, &tape);
  const double scale = cfg.logit_scale / std::max(model.logit_stats.sigma, 1e-12);
  LossResult lr = softmax_cross_entropy(logits, labels, scale);
  BatchGradients out;
  out.loss = lr.loss;
  out.correct = lr.correct;
  if (!std::isfinite(lr.loss)) return out;
  run_backward(model, tape, std::move(lr.grad), ctx);
  for (auto& slot : mac_slots(model, tape)) out.weight_grads.push_back(std::move(slot.second->grad_w));
  return out;
}

void clip_global_norm(std::vector<TensorR>& grads, double cap) {
  double ss = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (!(norm > cap)) return;
  const double f = cap / norm;
  for (auto& g : grads) {
    for (double& v : g.data()) v *= f;
  }
}

}  // namespace

BatchGradients compute_gradients(ModelGraph& model, const TensorR& input,
                                 std::span<const std::int32_t> labels, const TrainConfig& cfg,
                                 bool update) {
  validate(cfg);
  std::vector<LayerCache> tape;
  return gradients_impl(model, input, labels, cfg, make_context(model, &cfg, update), tape);
}

std::string_view to_string(SteScaling s) {
  return s == SteScaling::level_scaled ? "level-scaled" : "paper-literal";
}

SteScaling ste_scaling_from_string(std::string_view name) {
  if (name == "level-scaled") return SteScaling::level_scaled;
  if (name == "paper-literal") return SteScaling::paper_literal;
  throw ConfigError("unknown ste_scaling '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("train.lr must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (cfg.epochs_per_stage < 0 || cfg.float_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(cfg.logit_scale > 0.0)) throw ConfigError("train.logit_scale must be positive");
  if (!(cfg.grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
  if (!(cfg.stats_momentum > 0.0 && cfg.stats_momentum < 1.0)) {
    throw ConfigError("train.stats_momentum must be in (0, 1)");
  }
  try {
    validate(cfg.quant);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("quant: ") + e.what());
  }
}

TensorR cdf_act_forward(const TensorR& x, const LayerStats& stats, const QuantConfig& cfg) {
  const ThresholdTable table = build_threshold_table(stats.gauss(), cfg.b_a, cfg.rounding);
  TensorR y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = static_cast<double>(quantize_activation(x[i], table));
  }
  return y;
}

TensorR cdf_act_backward(const TensorR& upstream, const TensorR& x, const LayerStats& stats,
                         const QuantConfig& cfg, SteScaling scaling) {
  if (!(upstream.shape() == x.shape())) throw ShapeError("cdf_act_backward: shape mismatch");
  const GaussParams g = stats.gauss();
  const double scale =
      scaling == SteScaling::level_scaled ? std::ldexp(1.0, cfg.b_a) / normal_sf(0.0, g) : 1.0;
  TensorR out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = upstream[i] * normal_pdf(x[i], g) * scale;
  return out;
}

TensorR ste_weight_backward(const TensorR& upstream, const TensorR& w, const GaussParams& params,
                            int b_w) {
  validate(params);
  if (!(upstream.shape() == w.shape())) throw ShapeError("ste_weight_backward: shape mismatch");
  const double scale = std::ldexp(1.0, b_w);
  const double lim = static_cast<double>(max_weight(b_w));
  TensorR out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double s = (normal_cdf(w[i], params) - 0.5) * scale;
    if (std::fabs(s) > lim) continue;
    out[i] = upstream[i] * normal_pdf(w[i], params) * scale;
  }
  return out;
}

LayerStats update_stats(LayerStats stats, const TensorR& batch_mac) {
  if (batch_mac.empty()) throw ShapeError("update_stats: empty batch");
  double sum = 0.0;
  for (double v : batch_mac.data()) sum += v;
  const double n = static_cast<double>(batch_mac.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : batch_mac.data()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (stats.count == 0) {
    stats.mu = mean;
    stats.sigma = sd;
  } else {
    const double m = stats.momentum_ema;
    stats.mu = (1.0 - m) * stats.mu + m * mean;
    stats.sigma = (1.0 - m) * stats.sigma + m * sd;
  }
  stats.count += static_cast<std::int64_t>(batch_mac.size());
  return stats;
}

void sgd_step(TensorR& params, TensorR& velocity, const TensorR& grads, const TrainConfig& cfg) {
  if (!(params.shape() == grads.shape()) || !(params.shape() == velocity.shape())) {
    throw ShapeError("sgd_step: shape mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grads[i] + cfg.weight_decay * params[i];
    params[i] -= cfg.lr * velocity[i];
  }
}

void set_stage(ModelGraph& model, std::size_t stage) {
  const auto units = stage_units(model);
  if (stage > units.size()) {
    throw ConfigError("stage " + std::to_string(stage) + " exceeds the " +
                      std::to_string(units.size()) + " stage units");
  }
  for (std::size_t u = 0; u < units.size(); ++u) {
    const std::size_t li = units[u];
    model.layers[li].quantized = u < stage;
    if (li + 1 < model.layers.size() && model.layers[li + 1].kind == LayerKind::act_quant) {
      model.layers[li + 1].quantized = u < stage;
    }
  }
}

StageSchedule advance_stage(StageSchedule schedule, ModelGraph& model) {
  const auto units = stage_units(model);
  schedule.total = units.size();
  if (schedule.stage >= units.size()) {
    std::cerr << "warning: advance_stage called at final stage " << schedule.stage
              << "; nothing left to quantize\n";
    return schedule;
  }
  const std::size_t li = units[schedule.stage];
  LayerSpec& layer = model.layers[li];
  layer.quantized = true;
  if (li + 1 < model.layers.size() && model.layers[li + 1].kind == LayerKind::act_quant) {
    model.layers[li + 1].quantized = true;
  }
  ++schedule.stage;
  return schedule;
}

TensorR forward_eval(const ModelGraph& model, const TensorR& input) {
  return run_forward(model, input, make_context(model, nullptr, false), nullptr);
}

double evaluate_accuracy(const ModelGraph& model, const Dataset& data, const Split& split,
                         std::size_t batch_size) {
  if (split.count() == 0) return 0.0;
  const Context ctx = make_context(model, nullptr, false);
  std::int64_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.count(); start += batch_size) {
    const std::size_t end = std::min(split.count(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const TensorR logits = run_forward(model, batch_real(split, data.sample, idx), ctx, nullptr);
    const std::int64_t C = logits.shape().per_sample();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = logits.data().subspan(i * static_cast<std::size_t>(C), static_cast<std::size_t>(C));
      const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
      if (arg == split.labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.count());
}

void calibrate_stats(ModelGraph& model, const Dataset& data, std::size_t batches,
                     std::size_t batch_size, std::uint64_t seed) {
  Context ctx = make_context(model, nullptr, true);
  Rng rng(seed);
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t b = 0; b < batches; ++b) {
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.train.count()) - 1));
    run_forward(model, batch_real(data.train, data.sample, idx), ctx, nullptr);
  }
}

TrainResult train_model(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
  validate(cfg);
  validate(data);
  validate(model);
  if (!(cfg.quant == model.quant)) {
    throw ConfigError("train config quantization widths differ from the model's");
  }
  if (data.sample.c != model.input.c || data.sample.h != model.input.h ||
      data.sample.w != model.input.w) {
    throw ConfigError("dataset sample shape " + to_string(data.sample) +
                      " does not match model input " + to_string(model.input));
  }
  if (data.input_bits != model.input_bits) {
    throw ConfigError("dataset input_bits differs from the model's input encoding");
  }

  TrainResult result;
  result.schedule.stage = quantized_prefix(model);
  result.schedule.total = stage_units(model).size();
  const std::size_t final_stage = cfg.final_stage.value_or(result.schedule.total);
  if (final_stage > result.schedule.total) {
    throw ConfigError("final stage " + std::to_string(final_stage) + " exceeds the " +
                      std::to_string(result.schedule.total) + " stage units");
  }

  const Context ctx = make_context(model, &cfg, true);
  Rng rng(cfg.seed);
  std::vector<LayerCache> tape;
  std::vector<TensorR> velocity;
  for_each_mac(model, [&](const MacNode& mac, const std::string&) {
    velocity.emplace_back(mac.weights.shape());
  });

  const std::size_t n = data.train.count();
  std::vector<std::size_t> order(n);
  std::vector<std::size_t> idx;
  int epoch_counter = 0;

  auto run_epoch = [&]() {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i-- > 1;) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      const TensorR x = batch_real(data.train, data.sample, idx);
      const auto labels = batch_labels(data.train, idx);
      BatchGradients bg = gradients_impl(model, x, labels, cfg, ctx, tape);
      if (!std::isfinite(bg.loss)) {
        throw DivergenceError("non-finite loss at stage " + std::to_string(result.schedule.stage) +
                              ", epoch " + std::to_string(epoch_counter) + ", batch starting at " +
                              std::to_string(start));
      }
      loss_sum += bg.loss * static_cast<double>(end - start);
      correct += bg.correct;
      if (cfg.grad_clip > 0.0) clip_global_norm(bg.weight_grads, cfg.grad_clip);
      std::size_t k = 0;
      for_each_mac(model, [&](MacNode& mac, const std::string&) {
        sgd_step(mac.weights, velocity[k], bg.weight_grads[k], cfg);
        ++k;
      });
    }
    EpochRecord rec;
    rec.stage = result.schedule.stage;
    rec.epoch = epoch_counter++;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (data.test.count() > 0) rec.test_accuracy = evaluate_accuracy(model, data, data.test);
    rec.layers = stats_snapshot(model);
    if (on_epoch) on_epoch(rec);
    result.log.push_back(std::move(rec));
  };

  for (int e = 0; e < cfg.float_epochs; ++e) run_epoch();
  while (result.schedule.stage < final_stage) {
    result.schedule = advance_stage(result.schedule, model);
    for (int e = 0; e < cfg.epochs_per_stage; ++e) run_epoch();
  }
  freeze_quantization(model);
  return result;
}

}  // namespace kquant
