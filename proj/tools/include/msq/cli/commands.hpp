// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msq/cli/config.hpp"
#include "msq/metrics.hpp"

namespace msq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Command-line overrides applied on top of a loaded experiment.
struct TrainOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
  bool multi = false;
  std::optional<double> gamma;
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<double> lambda_t;
};

void apply_overrides(ExperimentConfig& cfg, const TrainOverrides& o);

/// p, grad_entropy, grad_maxsquare, grad_scaled_entropy for p = 0.5 + k*step up to 1 - step.
std::string render_curves(double gamma, double step);
void cmd_curves(double gamma, double step, const std::filesystem::path& out);

/// Writes source.uds, target.uds (labels held out) and target_eval.uds into `out_dir`.
void cmd_gen(const GenerationSpec& spec, const std::filesystem::path& out_dir);

/// Per seed: seed_<s>/model.ckpt, seed_<s>/loss_log.csv, seed_<s>/report.csv.
void cmd_train(const ExperimentConfig& cfg, std::ostream& log);

/// Report of a checkpoint on a labelled dataset; adds accuracy and, for classification,
/// top/bottom 30% confidence accuracies.
ClassReport evaluate(const Checkpoint& ckpt, const Dataset& data);
void cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
              const std::filesystem::path& out);

/// Runs the invariant suite, printing one line per property. Returns true iff all pass.
bool cmd_verify(std::ostream& out);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace msq::cli
