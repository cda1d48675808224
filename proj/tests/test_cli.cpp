// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unistd.h>

#include "helpers.hpp"
#include "kquant/cli.hpp"
#include "kquant/error.hpp"
#include "kquant/serialize.hpp"
#include "kquant/train.hpp"
#include "kquant/zoo.hpp"

using namespace kquant;
using namespace kquant::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("kquant-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kTinyConfig = R"({
  "arch": "small_conv",
  "seed": 3,
  "dataset": {"train": 200, "test": 50},
  "quant": {"b_a": 4, "b_w": 4},
  "train": {"float_epochs": 1, "epochs_per_stage": 1, "batch_size": 32}
})";

ModelGraph calibrated_small_conv(std::size_t stage) {
  ToyOptions o;
  o.train = 200;
  o.test = 50;
  const Dataset ds = make_toy_dataset(o);
  ModelGraph m = build_small_conv(10, {}, 2);
  calibrate_stats(m, ds, 4, 32, 1);
  set_stage(m, stage);
  freeze_quantization(m);
  return m;
}

}  // namespace

TEST_CASE("threshold export format") {
  ThresholdRecord r{"conv1.act", build_threshold_table({900.0, 900.0}, 2)};
  const std::string text = export_thresholds({r});
  CHECK(text.find("\"thresholds\": [\n        599,\n        1080,\n        1625\n      ]") != std::string::npos);
  CHECK(text.find("\"layer_name\": \"conv1.act\"") != std::string::npos);
  CHECK(import_thresholds(text) == std::vector<ThresholdRecord>{r});
  CHECK(export_thresholds(import_thresholds(text)) == text);
  CHECK(import_thresholds(export_thresholds({})).empty());
  CHECK_THROWS_AS(import_thresholds("{\"format\": \"other\"}"), ConfigError);
}

TEST_CASE("manifest round trip is byte-identical") {
  TempDir tmp;
  for (std::size_t stage : {0u, 1u, 3u}) {
    const ModelGraph m = calibrated_small_conv(stage);
    const fs::path a = tmp / ("a" + std::to_string(stage)), b = tmp / ("b" + std::to_string(stage));
    save_model(m, a);
    const ModelGraph loaded = load_model(a);
    save_model(loaded, b);
    for (const auto& entry : fs::directory_iterator(a)) {
      CAPTURE(entry.path().filename().string());
      CHECK(slurp(entry.path()) == slurp(b / entry.path().filename().string()));
    }
    CHECK(manifest_text(loaded) == manifest_text(m));
    CHECK(collect_thresholds(loaded) == collect_thresholds(m));
  }
}

TEST_CASE("weight blobs are checked against the manifest") {
  TempDir tmp;
  save_model(calibrated_small_conv(3), tmp.path);
  CHECK(fs::file_size(tmp / "conv1.wq.i8") == 16 * 9);
  CHECK(fs::file_size(tmp / "conv1.w.f64") == 16 * 9 * 8);
  const std::string blob = slurp(tmp / "conv1.wq.i8");
  write(tmp / "conv1.wq.i8", blob.substr(0, blob.size() - 1));
  CHECK_THROWS_AS(load_model(tmp.path), ConfigError);
  fs::remove(tmp / "conv1.wq.i8");
  CHECK_THROWS_AS(load_model(tmp.path), ConfigError);
}

TEST_CASE("run config parsing") {
  const RunConfig c = parse_run_config(kTinyConfig);
  CHECK(c.arch == "small_conv");
  CHECK(c.train.seed == 3);
  CHECK(c.dataset.toy.train == 200);
  CHECK(c.train.lr == 1e-3);
  CHECK(c.train.momentum == 0.9);
  CHECK(c.train.weight_decay == 1e-4);
  CHECK(c.train.ste_zero_gate);
  CHECK_FALSE(parse_run_config(R"({"train": {"ste_zero_gate": false}})").train.ste_zero_gate);
  try {
    parse_run_config(R"({"dataset": {"source": "directory-of-tensors"}})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dataset.path") != std::string::npos);
  }
  try {
    parse_run_config(R"({"train": {"lr": "fast"}})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
}

TEST_CASE("cli train is reproducible and records widths") {
  TempDir tmp;
  write(tmp / "cfg.json", kTinyConfig);
  const Run a = cli({"train", "--config", (tmp / "cfg.json").string(), "--out", (tmp / "a").string()});
  const Run b = cli({"train", "--config", (tmp / "cfg.json").string(), "--out", (tmp / "b").string()});
  REQUIRE(a.code == kExitOk);
  REQUIRE(b.code == kExitOk);
  CHECK(slurp(tmp / "a" / "metrics.jsonl") == slurp(tmp / "b" / "metrics.jsonl"));
  CHECK(slurp(tmp / "a" / "manifest.json") == slurp(tmp / "b" / "manifest.json"));
  const auto manifest = nlohmann::json::parse(slurp(tmp / "a" / "manifest.json"));
  CHECK(manifest["quant"]["b_a"] == 4);
  CHECK(manifest["quant"]["b_w"] == 4);

  // Integer inference on the trained model.
  ToyOptions o;
  o.train = 200;
  o.test = 50;
  o.seed = 3;
  const Dataset ds = make_toy_dataset(o);
  std::vector<std::size_t> idx{0, 1, 2};
  write_tensor_json(batch_int(ds.test, ds.sample, idx), tmp / "x.json");
  const Run inf = cli({"infer", "--model", (tmp / "a").string(), "--input", (tmp / "x.json").string(), "--checked"});
  CHECK(inf.code == kExitOk);
  std::istringstream lines(inf.out);
  std::string line;
  int samples = 0;
  nlohmann::json audit;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("audit")) audit = j["audit"];
    else ++samples;
  }
  CHECK(samples == 3);
  CHECK(audit["fractional_ops"] == 0);
  CHECK(audit["range_violations"] == 0);

  const Run ex = cli({"export-thresholds", "--model", (tmp / "a").string()});
  CHECK(ex.code == kExitOk);
  CHECK(import_thresholds(ex.out).size() == 2);

  const Run an = cli({"analyze", "--model", (tmp / "a").string(), "--out", (tmp / "r.json").string()});
  CHECK(an.code == kExitOk);
  CHECK(an.out.find("range report") != std::string::npos);
  const auto rep = nlohmann::json::parse(slurp(tmp / "r.json"));
  std::int64_t total = 0;
  for (const auto& r : rep["hw_cost"]["rows"]) total += r["comparators"].get<std::int64_t>();
  CHECK(total == rep["hw_cost"]["total_comparators"].get<std::int64_t>());
  bool ma15 = false;
  for (const auto& r : rep["ranges"]["rows"]) ma15 = ma15 || (r["name"] == "conv2" && r["m_a"] == 15);
  CHECK(ma15);
}

TEST_CASE("cli exit codes") {
  TempDir tmp;
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"train"}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);

  write(tmp / "bad.json", R"({"dataset": {"source": "directory-of-tensors"}})");
  const Run missing = cli({"train", "--config", (tmp / "bad.json").string()});
  CHECK(missing.code == kExitConfig);
  CHECK(missing.err.find("dataset.path") != std::string::npos);

  save_model(calibrated_small_conv(1), tmp / "partial");
  write_tensor_json(TensorI({1, 1, 12, 12}), tmp / "zero.json");
  const Run partial = cli({"infer", "--model", (tmp / "partial").string(), "--input", (tmp / "zero.json").string()});
  CHECK(partial.code == kExitModelState);

  save_model(calibrated_small_conv(3), tmp / "full");
  const Run zero = cli({"infer", "--model", (tmp / "full").string(), "--input", (tmp / "zero.json").string()});
  CHECK(zero.code == kExitOk);
  CHECK(zero.out.find("\"logits\":[0,0,0,0,0,0,0,0,0,0]") != std::string::npos);

  write_tensor_json(TensorI({1, 1, 12, 12}, 99), tmp / "wide.json");
  CHECK(cli({"infer", "--model", (tmp / "full").string(), "--input", (tmp / "wide.json").string()}).code ==
        kExitNumeric);

  save_model(build_small_conv(10, {}, 1), tmp / "float");
  const Run empty = cli({"export-thresholds", "--model", (tmp / "float").string()});
  CHECK(empty.code == kExitOk);
  CHECK(import_thresholds(empty.out).empty());

  CHECK(cli({"analyze", "--model", (tmp / "nowhere").string()}).code == kExitConfig);
}
