// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msq/tensor.hpp"

namespace msq {

inline constexpr std::int32_t kAbstain = -1;

/// N x C matrix of class probabilities, one simplex row per pixel or sample.
class ProbMap {
 public:
  static constexpr double kRowTolerance = 1e-9;

  ProbMap() : values_(Shape{0, 0}) {}
  /// Validates rank 2, entries in [0,1] and unit row sums.
  explicit ProbMap(Tensor values);
  ProbMap(std::size_t rows, std::size_t classes, std::vector<double> values);

  std::size_t rows() const noexcept { return values_.dim(0); }
  std::size_t classes() const noexcept { return values_.dim(1); }
  double operator()(std::size_t n, std::size_t c) const { return values_.at(n, c); }
  std::span<const double> row(std::size_t n) const {
    return values_.values().subspan(n * classes(), classes());
  }
  const Tensor& tensor() const noexcept { return values_; }

  bool operator==(const ProbMap& other) const = default;

 private:
  Tensor values_;
};

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> row);

/// Per-pixel class index or kAbstain.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::int32_t> labels) : labels_(std::move(labels)) {}

  static LabelMap abstaining(std::size_t n) { return LabelMap(std::vector<std::int32_t>(n, kAbstain)); }

  std::size_t size() const noexcept { return labels_.size(); }
  std::int32_t operator[](std::size_t i) const { return labels_[i]; }
  void set(std::size_t i, std::int32_t label) { labels_[i] = label; }
  bool assigned(std::size_t i) const { return labels_[i] != kAbstain; }
  std::size_t assigned_count() const;
  std::span<const std::int32_t> values() const noexcept { return labels_; }

  /// Throws DomainError unless every label is kAbstain or in [0, num_classes).
  void check_range(std::size_t num_classes) const;

  bool operator==(const LabelMap& other) const = default;

 private:
  std::vector<std::int32_t> labels_;
};

/// Self-produced pseudo-labels; same representation as LabelMap.
using GuidanceMask = LabelMap;

/// Row-wise argmax of a probability map.
LabelMap argmax_labels(const ProbMap& p);

struct LossResult {
  double value = 0.0;
  Tensor grad_wrt_probs;  ///< same shape as the ProbMap
  bool warning = false;   ///< set when the loss was defined by convention (e.g. nothing to average)
};

}  // namespace msq
