// SPDX-License-Identifier: Apache-2.0
#include "kquant/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "kquant/error.hpp"

namespace kquant {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---- tables and stats ----

json table_json(const std::string& name, const ThresholdTable& t) {
  json j;
  j["layer_name"] = name;
  j["b_a"] = t.b_a;
  j["mu"] = t.source.mu;
  j["sigma"] = t.source.sigma;
  j["z"] = t.z;
  j["thresholds"] = t.thresholds;
  return j;
}

ThresholdTable table_from_json(const json& j) {
  ThresholdTable t;
  t.b_a = j.at("b_a").get<int>();
  t.source = {j.at("mu").get<double>(), j.at("sigma").get<double>()};
  t.z = j.at("z").get<double>();
  t.thresholds = j.at("thresholds").get<std::vector<std::int64_t>>();
  validate(t);
  return t;
}

json stats_json(const LayerStats& s) {
  return json{{"mu", s.mu}, {"sigma", s.sigma}, {"momentum", s.momentum_ema}, {"count", s.count}};
}

LayerStats stats_from_json(const json& j) {
  LayerStats s;
  s.mu = j.at("mu").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.momentum_ema = j.at("momentum").get<double>();
  s.count = j.at("count").get<std::int64_t>();
  return s;
}

// ---- blobs ----

std::string f64_bytes(const TensorR& t) {
  std::string out(t.size() * 8, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

std::string i8_bytes(const TensorI& t) {
  std::string out(t.size(), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < -128 || t[i] > 127) throw OverflowError("weight does not fit one signed byte");
    out[i] = static_cast<char>(static_cast<std::int8_t>(t[i]));
  }
  return out;
}

std::string read_blob(const fs::path& dir, const json& ref, std::size_t expected) {
  const auto file = ref.at("file").get<std::string>();
  const auto declared = ref.at("bytes").get<std::size_t>();
  if (declared != expected) {
    throw ConfigError("blob " + file + " declares " + std::to_string(declared) +
                      " bytes, shape needs " + std::to_string(expected));
  }
  const fs::path path = dir / file;
  if (!fs::exists(path)) throw ConfigError("missing weight blob " + path.string());
  std::string bytes = read_file(path);
  if (bytes.size() != declared) {
    throw ConfigError("blob " + file + " is " + std::to_string(bytes.size()) + " bytes, manifest says " +
                      std::to_string(declared));
  }
  return bytes;
}

struct BlobWriter {
  fs::path dir;
  bool write = false;

  json mac(const MacNode& m, const std::string& name) {
    json j;
    j["spec"] = {{"out_ch", m.spec.out_ch},
                 {"in_ch", m.spec.in_ch},
                 {"kernel", m.spec.kernel},
                 {"stride", m.spec.stride},
                 {"padding", m.spec.padding}};
    const std::string wfile = name + ".w.f64";
    const std::string wb = f64_bytes(m.weights);
    if (write) write_file(dir / wfile, wb);
    j["weights"] = {{"file", wfile}, {"dtype", "f64le"}, {"bytes", wb.size()}};
    if (m.qweights) {
      const std::string qfile = name + ".wq.i8";
      const std::string qb = i8_bytes(m.qweights->values);
      if (write) write_file(dir / qfile, qb);
      j["qweights"] = {{"file", qfile},
                       {"dtype", "i8"},
                       {"b_w", m.qweights->b_w},
                       {"bytes", qb.size()},
                       {"mu", m.qweights->params.mu},
                       {"sigma", m.qweights->params.sigma}};
    }
    return j;
  }
};

json act_json(const ActNode& a, const std::string& name) {
  json j;
  j["stats"] = stats_json(a.stats);
  if (a.table) j["table"] = table_json(name, *a.table);
  return j;
}

MacNode mac_from_json(const json& j, const fs::path& dir) {
  MacNode m;
  const json& s = j.at("spec");
  m.spec = {s.at("out_ch").get<std::int64_t>(), s.at("in_ch").get<std::int64_t>(),
            s.at("kernel").get<std::int64_t>(), s.at("stride").get<std::int64_t>(),
            s.at("padding").get<std::int64_t>()};
  validate(m.spec);
  const Shape4 shape = m.spec.weight_shape();
  const auto count = static_cast<std::size_t>(shape.size());
  const std::string wb = read_blob(dir, j.at("weights"), count * 8);
  std::vector<double> w(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(wb[i * 8 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    w[i] = std::bit_cast<double>(bits);
  }
  m.weights = TensorR(shape, std::move(w));
  if (j.contains("qweights")) {
    const json& q = j.at("qweights");
    const std::string qb = read_blob(dir, q, count);
    QuantizedWeights qw;
    qw.b_w = q.at("b_w").get<int>();
    validate_weight_bits(qw.b_w);
    qw.params = {q.at("mu").get<double>(), q.at("sigma").get<double>()};
    std::vector<std::int64_t> v(count);
    const std::int64_t lim = max_weight(qw.b_w);
    for (std::size_t i = 0; i < count; ++i) {
      v[i] = static_cast<std::int8_t>(qb[i]);
      if (v[i] < -lim || v[i] > lim) throw ConfigError("quantized weight outside the b_w range");
    }
    qw.values = TensorI(shape, std::move(v));
    m.qweights = std::move(qw);
  }
  return m;
}

ActNode act_from_json(const json& j) {
  ActNode a;
  a.stats = stats_from_json(j.at("stats"));
  if (j.contains("table")) a.table = table_from_json(j.at("table"));
  return a;
}

json manifest_json(const ModelGraph& model, BlobWriter& blobs) {
  json j;
  j["format_version"] = kManifestVersion;
  j["arch"] = model.arch;
  j["input"] = {{"shape", {model.input.c, model.input.h, model.input.w}}, {"bits", model.input_bits}};
  j["quant"] = {{"b_a", model.quant.b_a},
                {"b_w", model.quant.b_w},
                {"rounding", std::string(to_string(model.quant.rounding.mode))}};
  j["logit_stats"] = stats_json(model.logit_stats);
  json layers = json::array();
  for (const auto& l : model.layers) {
    json e;
    e["name"] = l.name;
    e["kind"] = std::string(to_string(l.kind));
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
        e["quantized"] = l.quantized;
        e["mac"] = blobs.mac(l.mac, l.name);
        break;
      case LayerKind::act_quant:
        e["quantized"] = l.quantized;
        e["act"] = act_json(l.act, l.name);
        break;
      case LayerKind::maxpool:
        e["window"] = l.pool_window;
        e["stride"] = l.pool_stride;
        break;
      case LayerKind::residual_block: {
        const ResidualBlock& b = *l.block;
        e["quantized"] = l.quantized;
        e["entry"] = act_json(b.entry, l.name + ".entry");
        e["conv1"] = blobs.mac(b.conv1, l.name + ".conv1");
        e["mid"] = act_json(b.mid, l.name + ".mid");
        e["conv2"] = blobs.mac(b.conv2, l.name + ".conv2");
        if (b.shortcut) e["shortcut"] = blobs.mac(*b.shortcut, l.name + ".shortcut");
        break;
      }
    }
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j;
}

}  // namespace

std::vector<ThresholdRecord> collect_thresholds(const ModelGraph& model) {
  std::vector<ThresholdRecord> out;
  for_each_act(model, [&](const ActNode& act, const std::string& name) {
    if (act.table) out.push_back({name, *act.table});
  });
  return out;
}

std::string export_thresholds(const std::vector<ThresholdRecord>& records) {
  json j;
  j["format"] = "kquant-thresholds";
  j["version"] = kThresholdFormatVersion;
  json layers = json::array();
  for (const auto& r : records) layers.push_back(table_json(r.layer_name, r.table));
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

std::vector<ThresholdRecord> import_thresholds(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "kquant-thresholds" ||
        j.at("version").get<int>() != kThresholdFormatVersion) {
      throw ConfigError("unsupported threshold file format");
    }
    std::vector<ThresholdRecord> out;
    for (const auto& e : j.at("layers")) {
      out.push_back({e.at("layer_name").get<std::string>(), table_from_json(e)});
    }
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed threshold file: ") + e.what());
  }
}

std::string manifest_text(const ModelGraph& model) {
  BlobWriter blobs;
  return manifest_json(model, blobs).dump(2) + "\n";
}

void save_model(const ModelGraph& model, const fs::path& dir) {
  validate(model);
  fs::create_directories(dir);
  BlobWriter blobs{dir, true};
  write_file(dir / "manifest.json", manifest_json(model, blobs).dump(2) + "\n");
}

ModelGraph load_model(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw ConfigError("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest: " + std::string(e.what()));
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kManifestVersion) {
      throw ConfigError("unsupported manifest format_version " + std::to_string(version));
    }
    ModelGraph m;
    m.arch = j.at("arch").get<std::string>();
    const auto shape = j.at("input").at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 3) throw ConfigError("manifest input.shape must be [c, h, w]");
    m.input = {1, shape[0], shape[1], shape[2]};
    m.input_bits = j.at("input").at("bits").get<int>();
    m.quant.b_a = j.at("quant").at("b_a").get<int>();
    m.quant.b_w = j.at("quant").at("b_w").get<int>();
    m.quant.rounding.mode = rounding_mode_from_string(j.at("quant").at("rounding").get<std::string>());
    m.logit_stats = stats_from_json(j.at("logit_stats"));
    for (const auto& e : j.at("layers")) {
      LayerSpec l;
      l.name = e.at("name").get<std::string>();
      l.kind = layer_kind_from_string(e.at("kind").get<std::string>());
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::fc:
          l.quantized = e.at("quantized").get<bool>();
          l.mac = mac_from_json(e.at("mac"), dir);
          break;
        case LayerKind::act_quant:
          l.quantized = e.at("quantized").get<bool>();
          l.act = act_from_json(e.at("act"));
          break;
        case LayerKind::maxpool:
          l.pool_window = e.at("window").get<std::int64_t>();
          l.pool_stride = e.at("stride").get<std::int64_t>();
          break;
        case LayerKind::residual_block: {
          l.quantized = e.at("quantized").get<bool>();
          ResidualBlock b;
          b.entry = act_from_json(e.at("entry"));
          b.conv1 = mac_from_json(e.at("conv1"), dir);
          b.mid = act_from_json(e.at("mid"));
          b.conv2 = mac_from_json(e.at("conv2"), dir);
          if (e.contains("shortcut")) b.shortcut = mac_from_json(e.at("shortcut"), dir);
          l.block = std::move(b);
          break;
        }
      }
      m.layers.push_back(std::move(l));
    }
    validate(m);
    return m;
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest: " + std::string(e.what()));
  } catch (const DomainError& e) {
    throw ConfigError("invalid manifest: " + std::string(e.what()));
  }
}

TensorI read_tensor_json(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    const auto shape = j.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 4) throw ConfigError("tensor shape must have 4 entries [n, c, h, w]");
    return TensorI({shape[0], shape[1], shape[2], shape[3]},
                   j.at("data").get<std::vector<std::int64_t>>());
  } catch (const json::exception& e) {
    throw ConfigError("malformed tensor file " + path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ConfigError("tensor file " + path.string() + ": " + e.what());
  }
}

void write_tensor_json(const TensorI& t, const fs::path& path) {
  json j;
  j["shape"] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
  j["data"] = t.storage();
  write_file(path, j.dump() + "\n");
}

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.source == DatasetSource::builtin_toy) return make_toy_dataset(spec.toy);
  if (spec.path.empty()) throw ConfigError("dataset.path is required for directory-of-tensors");
  return load_tensor_directory(spec.path);
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  std::string field;
  try {
    auto get = [&](const json& obj, const char* key, auto& dst, const std::string& prefix) {
      if (!obj.contains(key)) return;
      field = prefix + key;
      dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get(j, "arch", cfg.arch, "");
    if (j.contains("num_classes")) {
      field = "num_classes";
      cfg.num_classes = j.at("num_classes").get<int>();
    }
    std::string out = cfg.out.string();
    get(j, "out", out, "");
    cfg.out = out;
    std::uint64_t seed = cfg.train.seed;
    get(j, "seed", seed, "");
    cfg.train.seed = seed;
    cfg.dataset.toy.seed = seed;

    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      std::string source = "builtin-toy";
      get(d, "source", source, "dataset.");
      if (source == "builtin-toy") {
        cfg.dataset.source = DatasetSource::builtin_toy;
        get(d, "seed", cfg.dataset.toy.seed, "dataset.");
        get(d, "train", cfg.dataset.toy.train, "dataset.");
        get(d, "test", cfg.dataset.toy.test, "dataset.");
        get(d, "classes", cfg.dataset.toy.classes, "dataset.");
        get(d, "noise", cfg.dataset.toy.noise, "dataset.");
      } else if (source == "directory-of-tensors") {
        cfg.dataset.source = DatasetSource::directory_of_tensors;
        if (!d.contains("path")) throw ConfigError("dataset.path is required for directory-of-tensors");
        std::string path;
        get(d, "path", path, "dataset.");
        cfg.dataset.path = path;
      } else {
        throw ConfigError("dataset.source must be builtin-toy or directory-of-tensors");
      }
    }
    if (j.contains("quant")) {
      const json& q = j.at("quant");
      get(q, "b_a", cfg.train.quant.b_a, "quant.");
      get(q, "b_w", cfg.train.quant.b_w, "quant.");
      if (q.contains("rounding")) {
        field = "quant.rounding";
        cfg.train.quant.rounding.mode = rounding_mode_from_string(q.at("rounding").get<std::string>());
      }
    }
    cfg.dataset.toy.input_bits = cfg.train.quant.b_a;
    if (j.contains("train")) {
      const json& t = j.at("train");
      get(t, "lr", cfg.train.lr, "train.");
      get(t, "momentum", cfg.train.momentum, "train.");
      get(t, "weight_decay", cfg.train.weight_decay, "train.");
      get(t, "epochs_per_stage", cfg.train.epochs_per_stage, "train.");
      get(t, "float_epochs", cfg.train.float_epochs, "train.");
      get(t, "batch_size", cfg.train.batch_size, "train.");
      get(t, "logit_scale", cfg.train.logit_scale, "train.");
      get(t, "stats_momentum", cfg.train.stats_momentum, "train.");
      get(t, "grad_clip", cfg.train.grad_clip, "train.");
      get(t, "ste_zero_gate", cfg.train.ste_zero_gate, "train.");
      if (t.contains("ste_scaling")) {
        field = "train.ste_scaling";
        cfg.train.ste_scaling = ste_scaling_from_string(t.at("ste_scaling").get<std::string>());
      }
      if (t.contains("final_stage") && !t.at("final_stage").is_null()) {
        field = "train.final_stage";
        cfg.train.final_stage = t.at("final_stage").get<std::size_t>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + field + "': " + e.what());
  } catch (const DomainError& e) {
    throw ConfigError("config field '" + field + "': " + e.what());
  }
  validate(cfg.train);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  return parse_run_config(read_file(path));
}

std::string metrics_line(const EpochRecord& rec) {
  json j;
  j["stage"] = rec.stage;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss;
  j["accuracy"] = rec.accuracy;
  j["test_accuracy"] = rec.test_accuracy ? json(*rec.test_accuracy) : json(nullptr);
  json layers = json::array();
  for (const auto& l : rec.layers) {
    layers.push_back({{"name", l.name}, {"mu", l.stats.mu}, {"sigma", l.stats.sigma}});
  }
  j["layers"] = std::move(layers);
  return j.dump() + "\n";
}

}  // namespace kquant
