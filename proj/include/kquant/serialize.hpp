// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats: model manifest + weight blobs, threshold export, integer
// tensors, run configs and the metrics log.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kquant/dataset.hpp"
#include "kquant/model.hpp"
#include "kquant/train.hpp"

namespace kquant {

inline constexpr int kManifestVersion = 1;
inline constexpr int kThresholdFormatVersion = 1;

struct ThresholdRecord {
  std::string layer_name;
  ThresholdTable table;
  bool operator==(const ThresholdRecord&) const = default;
};

/// Frozen tables of every quantized activation, in graph order.
std::vector<ThresholdRecord> collect_thresholds(const ModelGraph& model);

/// Canonical UTF-8 JSON with fixed key order:
/// {"format": "kquant-thresholds", "version": 1, "layers": [{layer_name, b_a,
/// mu, sigma, z, thresholds}, ...]}
std::string export_thresholds(const std::vector<ThresholdRecord>& records);
std::vector<ThresholdRecord> import_thresholds(std::string_view text);

/// Writes manifest.json plus one blob per weight tensor: full-precision
/// master weights as little-endian f64, frozen integer weights as one signed
/// byte each.
void save_model(const ModelGraph& model, const std::filesystem::path& dir);
ModelGraph load_model(const std::filesystem::path& dir);

/// Manifest text as save_model would write it.
std::string manifest_text(const ModelGraph& model);

/// {"shape": [n, c, h, w], "data": [...]}
TensorI read_tensor_json(const std::filesystem::path& path);
void write_tensor_json(const TensorI& t, const std::filesystem::path& path);

enum class DatasetSource { builtin_toy, directory_of_tensors };

struct DatasetSpec {
  DatasetSource source = DatasetSource::builtin_toy;
  std::filesystem::path path;  ///< directory-of-tensors only
  ToyOptions toy{};
};

Dataset load_dataset(const DatasetSpec& spec);

struct RunConfig {
  std::string arch = "small_conv";
  std::optional<int> num_classes;
  DatasetSpec dataset{};
  TrainConfig train{};
  std::filesystem::path out = "kquant-run";
};

/// Parses a JSON run config. Missing fields take their defaults (the SGD
/// defaults are lr 1e-3, momentum 0.9, weight decay 1e-4). Throws ConfigError
/// naming the offending field.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// One JSON object per line: {stage, epoch, loss, accuracy, test_accuracy,
/// layers: [{name, mu, sigma}]}.
std::string metrics_line(const EpochRecord& rec);

}  // namespace kquant
