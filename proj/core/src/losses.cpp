// SPDX-License-Identifier: Apache-2.0

#include "msq/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "msq/errors.hpp"
#include "msq/graph.hpp"

namespace msq {

namespace {

double clamped(double p) { return std::clamp(p, kLogFloor, 1.0); }

// d/dp of p * log(clamp(p)).
double plogp_derivative(double p) {
  const double cp = clamped(p);
  return std::log(cp) + (p >= kLogFloor ? 1.0 : 0.0);
}

// -sum_n sum_c p^2 * inv_weight[c], shared by both max-squares variants so that
// equal weights give bitwise-equal results.
LossResult weighted_squares(const ProbMap& p, const std::vector<double>& inv_weight) {
  const std::size_t n = p.rows(), c = p.classes();
  LossResult r{.value = 0.0, .grad_wrt_probs = Tensor(Shape{n, c})};
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p(i, k);
      acc += v * v * inv_weight[k];
      r.grad_wrt_probs.at(i, k) = -2.0 * v * inv_weight[k];
    }
  }
  r.value = -acc;
  return r;
}

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 0.5)) {
    throw DomainError(fmt::format("scaled entropy gamma {} outside (0, 0.5)", gamma));
  }
}

}  // namespace

TargetLoss parse_target_loss(std::string_view name) {
  if (name == "entropy") return TargetLoss::Entropy;
  if (name == "scaled") return TargetLoss::ScaledEntropy;
  if (name == "maxsquare") return TargetLoss::MaxSquares;
  if (name == "maxsquare_iw") return TargetLoss::IwMaxSquares;
  throw ConfigError(fmt::format("unknown target loss '{}' (expected entropy|scaled|maxsquare|maxsquare_iw)", name));
}

std::string_view target_loss_name(TargetLoss kind) {
  switch (kind) {
    case TargetLoss::Entropy:
      return "entropy";
    case TargetLoss::ScaledEntropy:
      return "scaled";
    case TargetLoss::MaxSquares:
      return "maxsquare";
    case TargetLoss::IwMaxSquares:
      return "maxsquare_iw";
  }
  return "unknown";
}

LossResult cross_entropy(const ProbMap& p, const LabelMap& labels) {
  if (labels.size() != p.rows()) {
    throw ShapeError(fmt::format("cross_entropy: {} labels for {} rows", labels.size(), p.rows()));
  }
  labels.check_range(p.classes());
  LossResult r{.value = 0.0, .grad_wrt_probs = Tensor(p.tensor().shape())};
  const std::size_t valid = labels.assigned_count();
  if (valid == 0) {
    r.warning = true;
    return r;
  }
  const double inv_n = 1.0 / static_cast<double>(valid);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (!labels.assigned(i)) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    const double py = p(i, y);
    acc += std::log(clamped(py));
    if (py >= kLogFloor) r.grad_wrt_probs.at(i, y) = -inv_n / py;
  }
  r.value = -acc * inv_n;
  return r;
}

LossResult entropy_loss(const ProbMap& p) {
  const std::size_t n = p.rows(), c = p.classes();
  LossResult r{.value = 0.0, .grad_wrt_probs = Tensor(Shape{n, c})};
  if (n == 0) {
    r.warning = true;
    return r;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p(i, k);
      acc += v * std::log(clamped(v));
      r.grad_wrt_probs.at(i, k) = -plogp_derivative(v) * inv_n;
    }
  }
  r.value = -acc * inv_n;
  return r;
}

LossResult scaled_entropy_loss(const ProbMap& p, double gamma) {
  check_gamma(gamma);
  const std::size_t n = p.rows(), c = p.classes();
  LossResult r{.value = 0.0, .grad_wrt_probs = Tensor(Shape{n, c})};
  if (n == 0) {
    r.warning = true;
    return r;
  }
  const double slope = 1.0 - 2.0 * gamma;
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double q = slope * p(i, k) + gamma;
      acc += q * std::log(clamped(q));
      r.grad_wrt_probs.at(i, k) = -slope * plogp_derivative(q) * inv_n;
    }
  }
  r.value = -acc * inv_n;
  return r;
}

LossResult max_squares_loss(const ProbMap& p) {
  if (p.rows() == 0) {
    return LossResult{.value = 0.0, .grad_wrt_probs = Tensor(p.tensor().shape()), .warning = true};
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(p.rows()));
  return weighted_squares(p, std::vector<double>(p.classes(), inv));
}

ClassCounts class_counts(const ProbMap& p) {
  ClassCounts out{.counts = std::vector<std::size_t>(p.classes(), 0), .total = p.rows()};
  for (std::size_t i = 0; i < p.rows(); ++i) ++out.counts[argmax(p.row(i))];
  return out;
}

LossResult iw_max_squares_loss(const ProbMap& p, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw DomainError(fmt::format("image-wise weighting alpha {} outside [0, 1]", alpha));
  }
  if (p.rows() == 0) {
    return LossResult{.value = 0.0, .grad_wrt_probs = Tensor(p.tensor().shape()), .warning = true};
  }
  const ClassCounts counts = class_counts(p);
  const double n_term = std::pow(static_cast<double>(counts.total), 1.0 - alpha);
  std::vector<double> inv(p.classes());
  for (std::size_t k = 0; k < inv.size(); ++k) {
    const double nc = static_cast<double>(std::max<std::size_t>(counts.counts[k], 1));
    inv[k] = 1.0 / (2.0 * std::pow(nc, alpha) * n_term);
  }
  return weighted_squares(p, inv);
}

std::vector<double> pearson_chi2_uniform(const ProbMap& p) {
  std::vector<double> out(p.rows());
  const auto c = static_cast<double>(p.classes());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double sq = 0.0;
    for (double v : p.row(i)) sq += v * v;
    out[i] = c * sq - 1.0;
  }
  return out;
}

LossResult target_loss(const ProbMap& p, const LossConfig& cfg) {
  switch (cfg.kind) {
    case TargetLoss::Entropy:
      return entropy_loss(p);
    case TargetLoss::ScaledEntropy:
      return scaled_entropy_loss(p, cfg.gamma);
    case TargetLoss::MaxSquares:
      return max_squares_loss(p);
    case TargetLoss::IwMaxSquares:
      return iw_max_squares_loss(p, cfg.alpha);
  }
  throw ConfigError("unknown target loss selector");
}

double binary_entropy_grad(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError(fmt::format("binary entropy gradient needs p in (0, 1), got {}", p));
  return std::abs(std::log(p) - std::log1p(-p));
}

double binary_maxsquare_grad(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(fmt::format("binary max-squares gradient needs p in [0, 1], got {}", p));
  return std::abs(4.0 * p - 2.0);
}

double binary_scaled_entropy_grad(double p, double gamma) {
  check_gamma(gamma);
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(fmt::format("scaled entropy gradient needs p in [0, 1], got {}", p));
  const double slope = 1.0 - 2.0 * gamma;
  const double q = slope * p + gamma;
  return slope * std::abs(std::log(q) - std::log1p(-q));
}

UdaObjective uda_objective(const ProbMap& p_src, const LabelMap& y_src, const ProbMap& p_tgt,
                           const LossConfig& cfg, double lambda_t) {
  if (!(lambda_t >= 0.0)) throw DomainError(fmt::format("lambda_t must be nonnegative, got {}", lambda_t));
  UdaObjective out;
  out.source = cross_entropy(p_src, y_src);
  out.target = target_loss(p_tgt, cfg);
  out.lambda_t = lambda_t;
  out.value = out.source.value + lambda_t * out.target.value;
  return out;
}

}  // namespace msq
