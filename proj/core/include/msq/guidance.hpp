// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "msq/losses.hpp"
#include "msq/types.hpp"

namespace msq {

inline constexpr double kDefaultDelta = 0.95;
inline constexpr double kDefaultLambdaLow = 0.1;

/// Final-head and low-level-head predictions over the same pixels.
struct MultiLevelOutput {
  ProbMap p_final;
  ProbMap p_low;

  /// Throws ShapeError when the two maps disagree in N or C.
  void check() const;
};

/// Elementwise mean of the two heads.
ProbMap ensemble_average(const MultiLevelOutput& m);

/// Pixel n is labeled c* = argmax of the ensemble iff p_final[n][c*] > delta or
/// p_low[n][c*] > delta; otherwise it abstains.
GuidanceMask self_guidance(const MultiLevelOutput& m, double delta);

struct MultiLevelLoss {
  double value = 0.0;
  LossResult final_term;  ///< target loss on p_final
  LossResult low_term;    ///< cross-entropy of p_low against the guidance (unweighted)
  GuidanceMask guidance;
  double lambda_low = 0.0;
};

/// L_final(p_final) + lambda_low * CE(p_low, guidance). The guidance is a constant:
/// low_term.grad_wrt_probs carries no contribution through the mask.
MultiLevelLoss multi_level_target_loss(const MultiLevelOutput& m, const LossConfig& cfg, double lambda_low,
                                       double delta);

}  // namespace msq
