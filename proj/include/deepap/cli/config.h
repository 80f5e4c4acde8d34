#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepap/data/split.h"
#include "deepap/models/model.h"
#include "deepap/sim/simulate.h"
#include "deepap/train/trainer.h"

namespace deepap::cli {

struct ModelSpec {
  std::string name;  // output file stem; defaults to the architecture name
  models::Arch arch = models::Arch::OLS;
  models::Hyper hyper;  // input_width and seq_len are filled from the data
  train::TrainConfig train;
};

// Everything a pipeline needs besides the command line. Absent data paths
// mean the panel comes from the run's simulate stage.
struct RunConfig {
  std::optional<std::filesystem::path> panel;
  std::optional<std::filesystem::path> macro;
  std::optional<std::filesystem::path> schema;
  sim::DgpSpec dgp;
  data::SplitSpec split;
  std::size_t window = 4;
  train::TrainConfig train;
  std::vector<ModelSpec> models;
  std::size_t dm_lag = 3;
  double dm_critical = eval::kDmCritical;
  std::uint64_t seed = 0;

  // Fully resolved form; parse_config(to_json()) gives back the same config.
  nlohmann::json to_json() const;
  // SHA-256 of the compact resolved JSON.
  std::string digest() const;
};

// OLS and a two-layer MLP on the default simulated panel.
RunConfig default_config();

// Missing keys keep their defaults; unknown keys, wrong types and invalid
// values throw ConfigError naming the key. Relative data paths are resolved
// against `base_dir`. Per-model "train" objects override the global one key
// by key.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

}  // namespace deepap::cli
