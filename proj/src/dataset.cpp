// SPDX-License-Identifier: Apache-2.0
#include "kquant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "kquant/error.hpp"
#include "kquant/rng.hpp"

namespace kquant {
namespace {

using json = nlohmann::ordered_json;

void check_split(const Split& s, std::int64_t per, int classes, int bits, const char* name) {
  if (static_cast<std::int64_t>(s.pixels.size()) != static_cast<std::int64_t>(s.count()) * per) {
    throw ConfigError(std::string("dataset split '") + name + "' has inconsistent pixel count");
  }
  for (std::int32_t y : s.labels) {
    if (y < 0 || y >= classes) throw ConfigError(std::string("dataset split '") + name + "' label out of range");
  }
  const int hi = (1 << bits) - 1;
  for (std::uint8_t v : s.pixels) {
    if (v > hi) throw ConfigError(std::string("dataset split '") + name + "' level exceeds input_bits");
  }
}

void write_split(const Split& s, std::int64_t per, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + file.string());
  for (std::size_t i = 0; i < s.count(); ++i) {
    const auto label = static_cast<char>(s.labels[i]);
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(s.pixels.data() + i * static_cast<std::size_t>(per)), per);
  }
}

Split read_split(const std::filesystem::path& file, std::int64_t count, std::int64_t per) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read dataset file " + file.string());
  Split s;
  s.labels.resize(static_cast<std::size_t>(count));
  s.pixels.resize(static_cast<std::size_t>(count * per));
  for (std::int64_t i = 0; i < count; ++i) {
    char label = 0;
    in.read(&label, 1);
    in.read(reinterpret_cast<char*>(s.pixels.data() + i * per), per);
    if (!in) throw ConfigError("dataset file " + file.string() + " is truncated");
    s.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(label);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ConfigError("dataset file " + file.string() + " is longer than declared");
  }
  return s;
}

}  // namespace

void validate(const Dataset& ds) {
  if (ds.classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (ds.input_bits < 1 || ds.input_bits > 8) throw ConfigError("dataset input_bits must be in [1, 8]");
  if (ds.train.count() == 0) throw ConfigError("dataset has no training samples");
  const std::int64_t per = ds.sample.per_sample();
  check_split(ds.train, per, ds.classes, ds.input_bits, "train");
  check_split(ds.test, per, ds.classes, ds.input_bits, "test");
}

Dataset make_toy_dataset(const ToyOptions& o) {
  if (o.template_size > o.size) throw ConfigError("template larger than image");
  Dataset ds;
  ds.sample = {1, 1, o.size, o.size};
  ds.classes = o.classes;
  ds.input_bits = o.input_bits;

  Rng rng(o.seed);
  const std::int64_t T = o.template_size;
  std::vector<std::vector<double>> templates(static_cast<std::size_t>(o.classes));
  for (auto& t : templates) {
    t.resize(static_cast<std::size_t>(T * T));
    for (double& v : t) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  const double top = static_cast<double>((1 << o.input_bits) - 1);
  const std::int64_t slack = o.size - T;

  auto fill = [&](Split& s, std::int64_t count) {
    s.labels.resize(static_cast<std::size_t>(count));
    s.pixels.assign(static_cast<std::size_t>(count * o.size * o.size), 0);
    for (std::int64_t i = 0; i < count; ++i) {
      const auto label = static_cast<std::int32_t>(rng.uniform_int(0, o.classes - 1));
      const std::int64_t dy = rng.uniform_int(0, slack), dx = rng.uniform_int(0, slack);
      const auto& t = templates[static_cast<std::size_t>(label)];
      s.labels[static_cast<std::size_t>(i)] = label;
      std::uint8_t* img = s.pixels.data() + i * o.size * o.size;
      for (std::int64_t y = 0; y < o.size; ++y) {
        for (std::int64_t x = 0; x < o.size; ++x) {
          double v = 0.0;
          const std::int64_t ty = y - dy, tx = x - dx;
          if (ty >= 0 && ty < T && tx >= 0 && tx < T) v = t[static_cast<std::size_t>(ty * T + tx)];
          v = std::clamp(v + rng.normal(0.0, o.noise), 0.0, 1.0);
          img[y * o.size + x] = static_cast<std::uint8_t>(std::lround(v * top));
        }
      }
    }
  };
  fill(ds.train, o.train);
  fill(ds.test, o.test);
  return ds;
}

Dataset load_tensor_directory(const std::filesystem::path& dir) {
  const auto meta_path = dir / "dataset.json";
  std::ifstream in(meta_path);
  if (!in) throw ConfigError("dataset.path: cannot open " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("dataset.path: malformed dataset.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.classes = meta.at("classes").get<int>();
    const auto shape = meta.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 3) throw ConfigError("dataset.json: shape must be [c, h, w]");
    ds.sample = {1, shape[0], shape[1], shape[2]};
    ds.input_bits = meta.at("input_bits").get<int>();
    const std::int64_t per = ds.sample.per_sample();
    ds.train = read_split(dir / meta.at("train").at("file").get<std::string>(),
                          meta.at("train").at("count").get<std::int64_t>(), per);
    if (meta.contains("test")) {
      ds.test = read_split(dir / meta.at("test").at("file").get<std::string>(),
                           meta.at("test").at("count").get<std::int64_t>(), per);
    }
  } catch (const json::exception& e) {
    throw ConfigError("dataset.json: " + std::string(e.what()));
  }
  validate(ds);
  return ds;
}

void save_tensor_directory(const Dataset& ds, const std::filesystem::path& dir) {
  validate(ds);
  std::filesystem::create_directories(dir);
  const std::int64_t per = ds.sample.per_sample();
  write_split(ds.train, per, dir / "train.bin");
  write_split(ds.test, per, dir / "test.bin");
  json meta;
  meta["classes"] = ds.classes;
  meta["shape"] = {ds.sample.c, ds.sample.h, ds.sample.w};
  meta["input_bits"] = ds.input_bits;
  meta["train"] = {{"file", "train.bin"}, {"count", ds.train.count()}};
  meta["test"] = {{"file", "test.bin"}, {"count", ds.test.count()}};
  std::ofstream out(dir / "dataset.json");
  out << meta.dump(2) << '\n';
}

TensorR batch_real(const Split& split, const Shape4& sample, std::span<const std::size_t> indices) {
  const std::int64_t per = sample.per_sample();
  TensorR out(Shape4{static_cast<std::int64_t>(indices.size()), sample.c, sample.h, sample.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::uint8_t* src = split.pixels.data() + indices[i] * static_cast<std::size_t>(per);
    std::copy(src, src + per, out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

TensorI batch_int(const Split& split, const Shape4& sample, std::span<const std::size_t> indices) {
  const std::int64_t per = sample.per_sample();
  TensorI out(Shape4{static_cast<std::int64_t>(indices.size()), sample.c, sample.h, sample.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::uint8_t* src = split.pixels.data() + indices[i] * static_cast<std::size_t>(per);
    std::copy(src, src + per, out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::int32_t> batch_labels(const Split& split, std::span<const std::size_t> indices) {
  std::vector<std::int32_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = split.labels[indices[i]];
  return out;
}

}  // namespace kquant
