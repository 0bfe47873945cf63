// SPDX-License-Identifier: Apache-2.0

#include "msq/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "msq/errors.hpp"

namespace msq {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
  if (pred.size() != truth.size()) {
    throw ShapeError(fmt::format("confusion_matrix: {} predictions for {} labels", pred.size(), truth.size()));
  }
  truth.check_range(num_classes);
  ConfusionMatrix cm{.num_classes = num_classes, .counts = std::vector<std::uint64_t>(num_classes * num_classes, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth.assigned(i)) continue;
    const std::int32_t p = pred[i];
    if (p < 0 || static_cast<std::size_t>(p) >= num_classes) {
      throw DomainError(fmt::format("confusion_matrix: prediction {} at {} outside [0, {})", p, i, num_classes));
    }
    ++cm.counts[static_cast<std::size_t>(truth[i]) * num_classes + static_cast<std::size_t>(p)];
  }
  return cm;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes;
  std::vector<std::optional<double>> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm(k, j);
      col += cm(j, k);
    }
    const std::uint64_t tp = cm(k, k);
    const std::uint64_t denom = row + col - tp;
    if (denom > 0) out[k] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(const std::vector<std::optional<double>>& iou) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : iou) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < cm.num_classes; ++k) diag += cm(k, k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<std::optional<double>> mean_prob_per_class(const ProbMap& p) {
  const std::size_t c = p.classes();
  std::vector<double> sum(c, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    const std::size_t k = argmax(row);
    sum[k] += row[k];
    ++count[k];
  }
  std::vector<std::optional<double>> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    if (count[k] > 0) out[k] = sum[k] / static_cast<double>(count[k]);
  }
  return out;
}

ClassFrequency class_frequency(const LabelMap& labels, std::size_t num_classes) {
  labels.check_range(num_classes);
  ClassFrequency out{.fraction = std::vector<double>(num_classes, 0.0)};
  std::vector<std::size_t> count(num_classes, 0);
  std::size_t total = 0;
  for (std::int32_t y : labels.values()) {
    if (y == kAbstain) continue;
    ++count[static_cast<std::size_t>(y)];
    ++total;
  }
  if (total == 0) {
    out.warning = true;
    return out;
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    out.fraction[k] = static_cast<double>(count[k]) / static_cast<double>(total);
  }
  return out;
}

ClassReport build_report(const ProbMap& p, const LabelMap& truth) {
  const ConfusionMatrix cm = confusion_matrix(argmax_labels(p), truth, p.classes());
  ClassReport r;
  r.iou = iou_per_class(cm);
  r.miou = miou(r.iou);
  r.mean_max_prob = mean_prob_per_class(p);
  r.frequency = class_frequency(truth, p.classes()).fraction;
  return r;
}

std::string render_report(const ClassReport& report) {
  const std::size_t c = report.iou.size();
  if (report.mean_max_prob.size() != c || report.frequency.size() != c) {
    throw ShapeError("render_report: per-class columns differ in length");
  }
  const auto field = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string(); };
  std::string text = "class,iou,mean_max_prob,frequency\n";
  for (std::size_t k = 0; k < c; ++k) {
    text += fmt::format("{},{},{},{:.6f}\n", k, field(report.iou[k]), field(report.mean_max_prob[k]),
                        report.frequency[k]);
  }
  text += fmt::format("miou,{:.6f},,\n", report.miou);
  for (const auto& [name, value] : report.extra) text += fmt::format("{},{:.6f},,\n", name, value);
  return text;
}

void emit_report(const ClassReport& report, const std::filesystem::path& path) {
  const std::string text = render_report(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace msq
