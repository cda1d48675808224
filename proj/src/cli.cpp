// SPDX-License-Identifier: Apache-2.0
#include "kquant/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>

#include "kquant/error.hpp"
#include "kquant/infer.hpp"
#include "kquant/serialize.hpp"
#include "kquant/train.hpp"
#include "kquant/zoo.hpp"

namespace kquant {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string model;
  std::string input;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stage;
  bool checked = false;
  bool parallel = false;
  std::size_t calib_batches = 20;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

RunConfig config_from(const Options& o) {
  RunConfig cfg = o.config.empty() ? parse_run_config("{}") : load_run_config(o.config);
  if (o.seed) {
    cfg.train.seed = *o.seed;
    cfg.dataset.toy.seed = *o.seed;
  }
  if (!o.out.empty()) cfg.out = o.out;
  return cfg;
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.config.empty()) throw ConfigError("train needs --config");
  RunConfig cfg = config_from(o);
  if (o.stage) cfg.train.final_stage = *o.stage;
  const Dataset data = load_dataset(cfg.dataset);
  if (data.input_bits != cfg.train.quant.b_a) {
    throw ConfigError("dataset input_bits must equal quant.b_a");
  }
  ModelGraph model = build_model(cfg.arch, cfg.num_classes.value_or(data.classes), cfg.train.quant,
                                 cfg.train.seed, data.sample);
  model.input_bits = data.input_bits;
  fs::create_directories(cfg.out);
  const fs::path log_path = cfg.out / "metrics.jsonl";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + log_path.string());
  TrainResult res = train_model(model, data, cfg.train, [&](const EpochRecord& rec) {
    log << metrics_line(rec);
    log.flush();
  });
  save_model(model, cfg.out);
  const double test_acc = evaluate_accuracy(model, data, data.test);
  out << "trained " << model.arch << " to stage " << res.schedule.stage << "/" << res.schedule.total
      << ", test accuracy " << test_acc << "\n";
  out << "model written to " << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out) {
  if (o.model.empty() || o.input.empty()) throw ConfigError("infer needs --model and --input");
  const ModelGraph model = load_model(o.model);
  const TensorI input = read_tensor_json(o.input);
  IntegerAudit audit;
  const TensorI logits = execute_graph(model, input, o.checked ? &audit : nullptr);
  const auto classes = argmax_classes(logits);
  const auto per = logits.shape().per_sample();
  for (std::int64_t n = 0; n < logits.shape().n; ++n) {
    json j;
    j["sample"] = n;
    j["class"] = classes[static_cast<std::size_t>(n)];
    std::vector<std::int64_t> row(logits.storage().begin() + n * per,
                                  logits.storage().begin() + (n + 1) * per);
    j["logits"] = row;
    out << j.dump() << "\n";
  }
  if (o.checked) {
    json a;
    a["macs"] = audit.macs;
    a["comparisons"] = audit.comparisons;
    a["additions"] = audit.additions;
    a["fractional_ops"] = audit.fractional_ops;
    a["range_violations"] = audit.range_violations;
    a["max_level_seen"] = audit.max_level_seen;
    a["max_mac_seen"] = audit.max_mac_seen;
    a["residual_adds"] = audit.residual_adds.size();
    a["mixed_domain_adds"] = audit.mixed_domain_adds();
    out << json{{"audit", a}}.dump() << "\n";
    if (audit.fractional_ops != 0 || audit.range_violations != 0) return kExitNumeric;
  }
  return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
  if (o.model.empty()) throw ConfigError("export-thresholds needs --model");
  const ModelGraph model = load_model(o.model);
  const std::string text = export_thresholds(collect_thresholds(model));
  if (o.out.empty()) {
    out << text;
  } else {
    write_text(o.out, text);
  }
  return kExitOk;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  if (o.model.empty()) throw ConfigError("analyze needs --model");
  const ModelGraph model = load_model(o.model);
  const RangeReport ranges = analyze_ranges(model);
  const HwCost hw = estimate_hw_cost(model, o.parallel);

  out << "range report (" << model.arch << ", b_a=" << model.quant.b_a << ", b_w=" << model.quant.b_w
      << ")\n";
  out << pad("layer", 18) << pad("kind", 14) << pad("fan_in", 8) << pad("M_a", 6) << pad("M_m", 12)
      << pad("acc_bits", 10) << "\n";
  for (const auto& r : ranges.rows) {
    out << pad(r.name, 18) << pad(r.kind, 14) << pad(std::to_string(r.fan_in), 8)
        << pad(std::to_string(r.m_a), 6) << pad(std::to_string(r.m_m), 12)
        << pad(std::to_string(r.acc_bits), 10) << "\n";
  }
  out << "max M_m " << ranges.max_m_m << ", widest accumulator " << ranges.max_acc_bits << " bits\n\n";
  out << "hardware cost (" << (hw.parallel ? "fully parallel" : "per processing unit") << ")\n";
  out << pad("layer", 18) << pad("units", 10) << pad("comparators", 13) << pad("cmp_width", 11)
      << pad("mux", 10) << pad("adder_bits", 12) << "\n";
  for (const auto& r : hw.rows) {
    out << pad(r.name, 18) << pad(std::to_string(r.units), 10) << pad(std::to_string(r.comparators), 13)
        << pad(std::to_string(r.comparator_width), 11) << pad(std::to_string(r.mux_count), 10)
        << pad(std::to_string(r.adder_bits), 12) << "\n";
  }
  out << pad("total", 18) << pad("", 10) << pad(std::to_string(hw.total_comparators), 13) << pad("", 11)
      << pad(std::to_string(hw.total_mux), 10) << pad(std::to_string(hw.total_adder_bits), 12)
      << "\n\n";

  json j;
  j["arch"] = model.arch;
  json rows = json::array();
  for (const auto& r : ranges.rows) {
    rows.push_back({{"name", r.name},
                    {"kind", r.kind},
                    {"b_in", r.b_in},
                    {"b_w", r.b_w},
                    {"in_ch", r.in_ch},
                    {"kernel", r.kernel},
                    {"fan_in", r.fan_in},
                    {"m_a", r.m_a},
                    {"m_m", r.m_m},
                    {"acc_bits", r.acc_bits}});
  }
  j["ranges"] = {{"rows", rows}, {"max_m_m", ranges.max_m_m}, {"max_acc_bits", ranges.max_acc_bits}};
  json hrows = json::array();
  for (const auto& r : hw.rows) {
    hrows.push_back({{"name", r.name},
                     {"kind", r.kind},
                     {"units", r.units},
                     {"comparators", r.comparators},
                     {"comparator_width", r.comparator_width},
                     {"mux_count", r.mux_count},
                     {"adder_bits", r.adder_bits}});
  }
  j["hw_cost"] = {{"parallel", hw.parallel},
                  {"rows", hrows},
                  {"total_comparators", hw.total_comparators},
                  {"total_mux", hw.total_mux},
                  {"total_adder_bits", hw.total_adder_bits}};
  const std::string text = j.dump(2) + "\n";
  if (o.out.empty()) {
    out << text;
  } else {
    write_text(o.out, text);
    out << "machine-readable report written to " << o.out << "\n";
  }
  return kExitOk;
}

// Post-hoc quantization of a float model: stage by stage, the statistics of
// the remaining layers are re-estimated on calibration batches.
int cmd_quantize(const Options& o, std::ostream& out) {
  if (o.model.empty() || o.out.empty()) throw ConfigError("quantize needs --model and --out");
  ModelGraph model = load_model(o.model);
  RunConfig cfg = config_from(o);
  cfg.out = o.out;
  const Dataset data = load_dataset(cfg.dataset);
  StageSchedule sched{quantized_prefix(model), stage_units(model).size()};
  const std::size_t target = std::min(o.stage.value_or(sched.total), sched.total);
  if (target < sched.stage) throw ModelStateError("model is already quantized beyond --stage");
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
  if (sched.stage == 0) calibrate_stats(model, data, o.calib_batches, bs, cfg.train.seed);
  while (sched.stage < target) {
    sched = advance_stage(sched, model);
    calibrate_stats(model, data, o.calib_batches, bs, cfg.train.seed + sched.stage);
  }
  freeze_quantization(model);
  save_model(model, o.out);
  out << "quantized " << sched.stage << "/" << sched.total << " stage units, train accuracy "
      << evaluate_accuracy(model, data, data.train) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaussian k-quantile quantization toolkit", "kquant"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train with gradual quantization");
  train->add_option("--config", o.config, "Run config (JSON)")->required();
  train->add_option("--out", o.out, "Output directory (overrides config)");
  train->add_option("--seed", o.seed, "Seed (overrides config)");
  train->add_option("--stage", o.stage, "Stop after this many stage units are quantized");

  auto* infer = app.add_subcommand("infer", "Integer-only inference");
  infer->add_option("--model", o.model, "Model directory")->required();
  infer->add_option("--input", o.input, "Input tensor JSON {shape, data}")->required();
  infer->add_flag("--checked", o.checked, "Audit integer-only execution");

  auto* exp = app.add_subcommand("export-thresholds", "Write per-layer threshold tables");
  exp->add_option("--model", o.model, "Model directory")->required();
  exp->add_option("--out", o.out, "Output file (stdout if omitted)");

  auto* analyze = app.add_subcommand("analyze", "Range and hardware cost report");
  analyze->add_option("--model", o.model, "Model directory")->required();
  analyze->add_option("--out", o.out, "Write the machine-readable section here");
  analyze->add_flag("--parallel", o.parallel, "Count fully parallel hardware");

  auto* quant = app.add_subcommand("quantize", "Post-hoc quantization of a float model");
  quant->add_option("--model", o.model, "Float model directory")->required();
  quant->add_option("--out", o.out, "Output model directory")->required();
  quant->add_option("--config", o.config, "Config naming the calibration dataset");
  quant->add_option("--seed", o.seed, "Calibration seed");
  quant->add_option("--stage", o.stage, "Quantize only this many stage units");
  quant->add_option("--calib-batches", o.calib_batches, "Calibration batches per stage");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*infer) return cmd_infer(o, out);
    if (*exp) return cmd_export(o, out);
    if (*analyze) return cmd_analyze(o, out);
    if (*quant) return cmd_quantize(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ModelStateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitModelState;
  } catch (const DomainError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const OverflowError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DegenerateError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DivergenceError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace kquant
