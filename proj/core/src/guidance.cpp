// SPDX-License-Identifier: Apache-2.0

#include "msq/guidance.hpp"

#include <fmt/format.h>

#include "msq/errors.hpp"

namespace msq {

void MultiLevelOutput::check() const {
  if (p_final.rows() != p_low.rows() || p_final.classes() != p_low.classes()) {
    throw ShapeError(fmt::format("multi-level heads disagree: final {}x{}, low {}x{}", p_final.rows(),
                                 p_final.classes(), p_low.rows(), p_low.classes()));
  }
}

ProbMap ensemble_average(const MultiLevelOutput& m) {
  m.check();
  const Tensor& a = m.p_final.tensor();
  const Tensor& b = m.p_low.tensor();
  Tensor out(a.shape());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (a[j] + b[j]) / 2.0;
  return ProbMap(std::move(out));
}

GuidanceMask self_guidance(const MultiLevelOutput& m, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError(fmt::format("guidance threshold {} outside (0, 1)", delta));
  const ProbMap ens = ensemble_average(m);
  GuidanceMask mask = LabelMap::abstaining(ens.rows());
  for (std::size_t n = 0; n < ens.rows(); ++n) {
    const std::size_t c = argmax(ens.row(n));
    if (m.p_final(n, c) > delta || m.p_low(n, c) > delta) mask.set(n, static_cast<std::int32_t>(c));
  }
  return mask;
}

MultiLevelLoss multi_level_target_loss(const MultiLevelOutput& m, const LossConfig& cfg, double lambda_low,
                                       double delta) {
  if (!(lambda_low >= 0.0)) throw DomainError(fmt::format("lambda_low must be nonnegative, got {}", lambda_low));
  MultiLevelLoss out;
  out.guidance = self_guidance(m, delta);
  out.final_term = target_loss(m.p_final, cfg);
  out.low_term = cross_entropy(m.p_low, out.guidance);
  out.lambda_low = lambda_low;
  out.value = out.final_term.value + lambda_low * out.low_term.value;
  return out;
}

}  // namespace msq
