// SPDX-License-Identifier: Apache-2.0
//
// Confusion matrices, IoU, per-class confidence and frequency, and the report CSV.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msq/types.hpp"

namespace msq {

/// counts[truth][pred], row-major C x C.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
};

/// Abstaining truth pixels are skipped. Throws ShapeError on length mismatch and
/// DomainError for labels >= C (or abstaining predictions on counted pixels).
ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes);

/// TP / (TP + FP + FN); nullopt when the denominator is zero.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);
/// Mean over defined classes; 0 when none is defined.
double miou(const std::vector<std::optional<double>>& iou);
/// Overall fraction of counted pixels on the diagonal; 0 for an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// Mean max-probability over rows whose argmax is each class.
std::vector<std::optional<double>> mean_prob_per_class(const ProbMap& p);

struct ClassFrequency {
  std::vector<double> fraction;
  bool warning = false;  ///< every label abstained
};
ClassFrequency class_frequency(const LabelMap& labels, std::size_t num_classes);

struct ClassReport {
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  std::vector<std::optional<double>> mean_max_prob;
  std::vector<double> frequency;
  /// Extra "name,value,," rows appended after the miou row.
  std::vector<std::pair<std::string, double>> extra;
};

/// IoU and confidence from predictions, frequency from the truth labels.
ClassReport build_report(const ProbMap& p, const LabelMap& truth);

/// CSV text: header class,iou,mean_max_prob,frequency; one row per class; a trailing
/// miou row; absent values as empty fields; six decimals.
std::string render_report(const ClassReport& report);
void emit_report(const ClassReport& report, const std::filesystem::path& path);

}  // namespace msq
