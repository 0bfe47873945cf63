// SPDX-License-Identifier: Apache-2.0

#include "msq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "msq/errors.hpp"
#include "msq/types.hpp"

namespace msq {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError(fmt::format("tensor shape {} needs {} values, got {}", shape_string(shape_),
                                 shape_size(shape_), data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape_)));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_string(shape_), shape_string(shape)));
  }
  return Tensor(std::move(shape), data_);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

// --- ProbMap / LabelMap ---------------------------------------------------

ProbMap::ProbMap(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 2) {
    throw ShapeError("probability map must be 2-D, got " + shape_string(values_.shape()));
  }
  const std::size_t n = values_.dim(0);
  const std::size_t c = values_.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = values_.at(i, k);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError(fmt::format("probability ({}, {}) = {} outside [0, 1]", i, k, p));
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kRowTolerance) {
      throw DomainError(fmt::format("probability row {} sums to {}", i, total));
    }
  }
}

ProbMap::ProbMap(std::size_t rows, std::size_t classes, std::vector<double> values)
    : ProbMap(Tensor(Shape{rows, classes}, std::move(values))) {}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

LabelMap argmax_labels(const ProbMap& p) {
  std::vector<std::int32_t> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = static_cast<std::int32_t>(argmax(p.row(i)));
  return LabelMap(std::move(out));
}

std::size_t LabelMap::assigned_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [](std::int32_t l) { return l != kAbstain; }));
}

void LabelMap::check_range(std::size_t num_classes) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const std::int32_t l = labels_[i];
    if (l == kAbstain) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DomainError(fmt::format("label {} at index {} outside [0, {})", l, i, num_classes));
    }
  }
}

}  // namespace msq
