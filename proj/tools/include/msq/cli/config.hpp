// SPDX-License-Identifier: Apache-2.0
//
// Strict JSON configuration for generation and training runs. Unknown keys and
// missing required keys raise ConfigError naming the offending field.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "msq/data_synth.hpp"
#include "msq/models.hpp"
#include "msq/training.hpp"

namespace msq::cli {

using GenerationSpec = std::variant<ClassificationDomainSpec, SegmentationDomainSpec>;

/// Pre-generated UDS1 files. target_eval holds the target features with their true labels.
struct DataFiles {
  std::filesystem::path source;
  std::filesystem::path target;
  std::filesystem::path target_eval;
};

struct ExperimentConfig {
  std::variant<GenerationSpec, DataFiles> data;
  ModelSpec model;
  TrainConfig train;
  std::filesystem::path out = "runs";
  std::vector<std::uint64_t> repeat_seeds;
};

GenerationSpec parse_generation(std::string_view json_text);
/// Relative data paths resolve against `base_dir` and must exist.
ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir);

ExperimentConfig load_experiment(const std::filesystem::path& path);
GenerationSpec load_generation(const std::filesystem::path& path);

void set_seed(GenerationSpec& spec, std::uint64_t seed);
DomainPair generate(const GenerationSpec& spec);

/// Model sized for a dataset: MLP input_dim and class count, or segnet channels and classes.
ModelSpec fit_model(ModelSpec model, const Dataset& data);

}  // namespace msq::cli
