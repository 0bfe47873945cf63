// SPDX-License-Identifier: Apache-2.0
//
// Source cross-entropy and the target-domain loss family. Every loss is a pure
// function of a ProbMap returning its value and its analytic gradient with
// respect to the probabilities; logs consume probabilities clamped to
// [kLogFloor, 1].

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "msq/types.hpp"

namespace msq {

enum class TargetLoss { Entropy, ScaledEntropy, MaxSquares, IwMaxSquares };

/// Parses "entropy" | "scaled" | "maxsquare" | "maxsquare_iw"; throws ConfigError otherwise.
TargetLoss parse_target_loss(std::string_view name);
std::string_view target_loss_name(TargetLoss kind);

struct LossConfig {
  TargetLoss kind = TargetLoss::MaxSquares;
  double gamma = 0.1;  ///< scaled entropy compression, in (0, 0.5)
  double alpha = 0.2;  ///< image-wise weighting exponent, in [0, 1]
};

/// Mean negative log-likelihood over non-abstained pixels. All-abstain yields 0 with warning set.
LossResult cross_entropy(const ProbMap& p, const LabelMap& labels);

/// Mean Shannon entropy per pixel; 0 log 0 = 0.
LossResult entropy_loss(const ProbMap& p);

/// Entropy of (1 - 2 gamma) p + gamma.
LossResult scaled_entropy_loss(const ProbMap& p, double gamma);

/// -(1/2N) sum_n sum_c p^2.
LossResult max_squares_loss(const ProbMap& p);

struct ClassCounts {
  std::vector<std::size_t> counts;  ///< pixels whose argmax is each class
  std::size_t total = 0;
};

/// Argmax histogram of a map; ties go to the lowest class index.
ClassCounts class_counts(const ProbMap& p);

/// Max squares with per-class normalizer (N^c)^alpha * N^(1-alpha); counts come from
/// the map's own argmax and are clamped to at least 1.
LossResult iw_max_squares_loss(const ProbMap& p, double alpha);

/// Pearson chi-square divergence of each row from the uniform distribution: C sum_c p^2 - 1.
std::vector<double> pearson_chi2_uniform(const ProbMap& p);

/// Dispatch on the configured target loss.
LossResult target_loss(const ProbMap& p, const LossConfig& cfg);

// Closed-form binary-case gradient magnitudes, evaluated directly (no autodiff).

/// |log p - log(1 - p)|; p must lie in (0, 1).
double binary_entropy_grad(double p);
/// |4p - 2|; p must lie in [0, 1].
double binary_maxsquare_grad(double p);
/// (1 - 2 gamma) |log q - log(1 - q)| with q = (1 - 2 gamma) p + gamma.
double binary_scaled_entropy_grad(double p, double gamma);

/// Source cross-entropy plus weighted target loss.
struct UdaObjective {
  double value = 0.0;
  LossResult source;  ///< cross-entropy term
  LossResult target;  ///< unweighted target term
  double lambda_t = 0.0;
};

UdaObjective uda_objective(const ProbMap& p_src, const LabelMap& y_src, const ProbMap& p_tgt,
                           const LossConfig& cfg, double lambda_t);

}  // namespace msq
