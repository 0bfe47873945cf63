// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum, learning-rate schedules, source pretraining and joint
// source/target adaptation. Every run is a deterministic function of
// (model spec, datasets, config).

#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "msq/data_synth.hpp"
#include "msq/guidance.hpp"
#include "msq/losses.hpp"
#include "msq/models.hpp"

namespace msq {

/// lr0 * (1 - iter/max_iter)^power. Throws DomainError for max_iter = 0 or iter > max_iter.
double poly_lr(double lr0, std::size_t iter, std::size_t max_iter, double power);
/// eta0 / (1 + alpha * progress)^beta for progress in [0, 1].
double anneal_lr(double eta0, double progress, double alpha, double beta);

struct PolySchedule {
  double power = 0.9;
};
struct AnnealSchedule {
  double alpha = 10.0;
  double beta = 0.75;
};
using Schedule = std::variant<PolySchedule, AnnealSchedule>;

struct TrainConfig {
  double lambda_t = 0.1;
  double lambda_low = kDefaultLambdaLow;
  double delta = kDefaultDelta;
  LossConfig loss;
  double lr0 = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t max_iter = 2000;
  std::size_t pretrain_iter = 500;
  Schedule schedule = PolySchedule{};
  bool multi_level = false;
  std::size_t batch_size = 32;  ///< classification samples per domain per step
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
  /// Scheduled rate at step `iter` of a phase lasting `total` steps.
  double lr_at(std::size_t iter, std::size_t total) const;
};

struct OptimizerState {
  TensorMap velocity;
  std::size_t iteration = 0;
};

/// g' = g + wd*w; v <- momentum*v + g'; w <- w - lr*v. Updates params and state in place.
/// Every parameter needs a gradient of the same shape.
void sgd_step(TensorMap& params, const TensorMap& grads, OptimizerState& state, double lr, double momentum,
              double weight_decay);

struct LossLogRow {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_target = 0.0;  ///< unweighted target objective
};

struct TrainResult {
  TensorMap params;
  std::vector<LossLogRow> log;
};

/// Cross-entropy-only training from the model's initialization for cfg.pretrain_iter steps.
TensorMap pretrain_source(const ModelSpec& model, const Dataset& source, const TrainConfig& cfg);

/// cfg.max_iter steps of the joint objective CE(source) + lambda_t * target loss, starting
/// from `init`. Target labels are never read; a target carrying labels is rejected.
TrainResult adapt(const ModelSpec& model, const TensorMap& init, const Dataset& source, const Dataset& target,
                  const TrainConfig& cfg);

/// The source half of adapt() alone, drawing the same source batches with the same schedule.
TrainResult continue_source_training(const ModelSpec& model, const TensorMap& init, const Dataset& source,
                                     const TrainConfig& cfg);

/// Class probabilities for every sample (classification) or pixel (segmentation, final head).
ProbMap predict(const ModelSpec& model, const TensorMap& params, const Dataset& data);
/// Both heads of a segmentation model over every pixel.
MultiLevelOutput predict_heads(const SegNetSpec& model, const TensorMap& params, const Dataset& data);

struct ConfidenceSplit {
  std::vector<std::size_t> top;
  std::vector<std::size_t> bottom;
};

/// Highest and lowest floor(fraction * N) rows by max probability; ties go to the lower index.
/// fraction must lie in (0, 0.5].
ConfidenceSplit confidence_split(const ProbMap& p, double fraction);

/// CSV with header iter,lr,loss_total,loss_ce,loss_target.
void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log);

}  // namespace msq
