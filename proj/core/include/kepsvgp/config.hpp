#pragma once

#include <cstdint>
#include <string>

#include "kepsvgp/data.hpp"
#include "kepsvgp/model.hpp"
#include "kepsvgp/training.hpp"

namespace kepsvgp::config {

struct DataConfig {
  std::string task = "majority";  // majority | csv
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  std::size_t seq_len = 16;
  std::size_t vocab = 8;
  std::size_t classes = 4;
  std::uint64_t seed = 7;
  std::string train_path, val_path, test_path;  // csv task
};

struct EvalConfig {
  std::size_t mc_samples = 10;
  std::size_t ece_bins = 15;
};

struct PathsConfig {
  std::string checkpoint_dir = ".";
  std::string report_dir = ".";
};

struct RunConfig {
  model::TransformerConfig model;
  training::TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  PathsConfig paths;
};

/// Strict parse: unknown keys anywhere raise InvalidConfig naming the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Canonical JSON snapshot of a config (stable key order).
std::string to_json(const RunConfig& cfg);

/// FNV-1a 64-bit hash of the canonical snapshot, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

data::Dataset make_train_split(const DataConfig& d);
data::Dataset make_val_split(const DataConfig& d);
data::Dataset make_test_split(const DataConfig& d);

}  // namespace kepsvgp::config
