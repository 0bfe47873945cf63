// SPDX-License-Identifier: Apache-2.0

#include "msq/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "msq/errors.hpp"
#include "msq/seeding.hpp"

namespace msq {

namespace {

// Pixel jitter uses its own stream so scene layout does not depend on noise draws.
constexpr std::uint64_t kPixelStreamOffset = 16;

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Dataset empty_like(DatasetKind kind, std::size_t classes, Shape feature_shape) {
  Dataset d;
  d.kind = kind;
  d.num_classes = classes;
  d.features = Tensor(std::move(feature_shape));
  return d;
}

}  // namespace

// --- Dataset -------------------------------------------------------------------

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = channels() * pixels_per_sample();
  Tensor out(Shape{indices.size(), channels(), height(), width()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t s = indices[k];
    if (s >= num_samples()) throw ShapeError(fmt::format("sample {} out of range ({})", s, num_samples()));
    std::copy_n(features.values().begin() + static_cast<std::ptrdiff_t>(s * per), per,
                out.values().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return out;
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
  Tensor img = images(indices);
  return img.reshaped(Shape{indices.size(), channels() * pixels_per_sample()});
}

LabelMap Dataset::labels_of(std::span<const std::size_t> indices) const {
  const std::size_t per = pixels_per_sample();
  std::vector<std::int32_t> out;
  out.reserve(indices.size() * per);
  for (std::size_t s : indices) {
    if (s >= num_samples()) throw ShapeError(fmt::format("sample {} out of range ({})", s, num_samples()));
    for (std::size_t p = 0; p < per; ++p) out.push_back(labels[s * per + p]);
  }
  return LabelMap(std::move(out));
}

void Dataset::validate() const {
  if (features.rank() != 4) throw ShapeError("dataset features must be [S x Cin x H x W]");
  if (kind == DatasetKind::Classification && pixels_per_sample() != 1) {
    throw ShapeError("classification datasets need H = W = 1");
  }
  if (labels.size() != num_samples() * pixels_per_sample()) {
    throw ShapeError(fmt::format("dataset has {} labels for {} samples of {} pixels", labels.size(), num_samples(),
                                 pixels_per_sample()));
  }
  labels.check_range(num_classes);
}

Dataset DomainPair::target_eval() const {
  Dataset d = target;
  d.labels = target_eval_labels;
  d.validate();
  return d;
}

// --- classification ----------------------------------------------------------------

void ClassificationDomainSpec::validate() const {
  if (num_classes < 2) throw ConfigError("classification: num_classes must be >= 2");
  if (samples_per_class < 1) throw ConfigError("classification: samples_per_class must be >= 1");
  if (means.size() != num_classes) {
    throw ConfigError(fmt::format("classification: {} means for {} classes", means.size(), num_classes));
  }
  if (!(cov_scale > 0.0)) throw ConfigError("classification: cov_scale must be > 0");
  if (!(target_noise >= 0.0)) throw ConfigError("classification: target_noise must be >= 0");
}

DomainPair gen_classification_pair(const ClassificationDomainSpec& spec) {
  spec.validate();
  const std::size_t total = spec.num_classes * spec.samples_per_class;

  const auto make = [&](Domain domain, std::array<double, 2> shift, double variance, LabelMap& truth) {
    Dataset d = empty_like(DatasetKind::Classification, spec.num_classes, Shape{total, 2, 1, 1});
    std::vector<std::int32_t> labels(total);
    const double sigma = std::sqrt(variance);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
        const std::size_t s = k * spec.samples_per_class + i;
        std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(domain), s));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t a = 0; a < 2; ++a) {
          d.features[s * 2 + a] = as_f32(spec.means[k][a] + shift[a] + sigma * normal(rng));
        }
        labels[s] = static_cast<std::int32_t>(k);
      }
    }
    truth = LabelMap(std::move(labels));
    return d;
  };

  DomainPair pair;
  LabelMap source_labels;
  pair.source = make(Domain::Source, {0.0, 0.0}, spec.cov_scale, source_labels);
  pair.source.labels = std::move(source_labels);
  pair.target = make(Domain::Target, spec.target_shift, spec.cov_scale + spec.target_noise, pair.target_eval_labels);
  pair.target.labels = LabelMap::abstaining(total);
  return pair;
}

// --- segmentation --------------------------------------------------------------------

void SegmentationDomainSpec::validate() const {
  if (height < 3 || width < 3 || height > 64 || width > 64) {
    throw ConfigError(fmt::format("segmentation: image size {}x{} outside [3, 64]", height, width));
  }
  if (num_classes < 2) throw ConfigError("segmentation: num_classes must be >= 2");
  if (class_frequency_weights.size() != num_classes) {
    throw ConfigError(fmt::format("segmentation: {} frequency weights for {} classes", class_frequency_weights.size(),
                                  num_classes));
  }
  for (double w : class_frequency_weights) {
    if (!(w > 0.0)) throw ConfigError("segmentation: class_frequency_weights must be positive");
  }
  if (!(appearance_shift.noise_sigma >= 0.0) || !(texture_sigma >= 0.0)) {
    throw ConfigError("segmentation: noise levels must be >= 0");
  }
}

std::array<double, 3> class_color(std::size_t cls) {
  static constexpr std::array<std::array<double, 3>, 8> kPalette{{
      {0.30, 0.30, 0.30},
      {0.80, 0.25, 0.25},
      {0.25, 0.35, 0.85},
      {0.25, 0.80, 0.30},
      {0.85, 0.80, 0.25},
      {0.75, 0.30, 0.80},
      {0.25, 0.80, 0.80},
      {0.95, 0.60, 0.30},
  }};
  if (cls < kPalette.size()) return kPalette[cls];
  std::mt19937_64 rng(mix64(cls));
  std::uniform_real_distribution<double> u(0.1, 0.9);
  return {u(rng), u(rng), u(rng)};
}

std::vector<SceneShape> sample_scene(const SegmentationDomainSpec& spec, Domain domain, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(domain), index));
  std::discrete_distribution<std::int32_t> pick_class(spec.class_frequency_weights.begin(),
                                                      spec.class_frequency_weights.end());
  const auto h = static_cast<double>(spec.height);
  const auto w = static_cast<double>(spec.width);
  std::uniform_real_distribution<double> cy(0.0, h), cx(0.0, w);
  std::uniform_real_distribution<double> rect_h(h / 12.0, h / 5.0), rect_w(w / 12.0, w / 5.0);
  std::uniform_real_distribution<double> radius(std::min(h, w) / 12.0, std::min(h, w) / 6.0);
  std::bernoulli_distribution disc(0.5);

  std::vector<SceneShape> shapes;
  shapes.reserve(spec.shapes_per_image);
  for (std::size_t s = 0; s < spec.shapes_per_image; ++s) {
    SceneShape shape{};
    shape.cls = pick_class(rng);
    shape.kind = disc(rng) ? ShapeKind::Disc : ShapeKind::Rect;
    shape.cy = cy(rng);
    shape.cx = cx(rng);
    if (shape.kind == ShapeKind::Disc) {
      shape.half_h = shape.half_w = radius(rng);
    } else {
      shape.half_h = rect_h(rng);
      shape.half_w = rect_w(rng);
    }
    shapes.push_back(shape);
  }
  return shapes;
}

DomainPair gen_segmentation_pair(const SegmentationDomainSpec& spec) {
  spec.validate();
  if (spec.shapes_per_image > spec.height * spec.width) {
    throw GenerationError(fmt::format("{} shapes exceed the {}-pixel area budget", spec.shapes_per_image,
                                      spec.height * spec.width));
  }
  const std::size_t plane = spec.height * spec.width;

  const auto make = [&](Domain domain, const AppearanceShift& shift, LabelMap& truth) {
    Dataset d = empty_like(DatasetKind::Segmentation, spec.num_classes,
                           Shape{spec.num_images, kImageChannels, spec.height, spec.width});
    std::vector<std::int32_t> labels(spec.num_images * plane, 0);
    for (std::size_t img = 0; img < spec.num_images; ++img) {
      std::int32_t* lab = &labels[img * plane];
      for (const SceneShape& s : sample_scene(spec, domain, img)) {
        for (std::size_t i = 0; i < spec.height; ++i) {
          for (std::size_t j = 0; j < spec.width; ++j) {
            const double dy = static_cast<double>(i) + 0.5 - s.cy;
            const double dx = static_cast<double>(j) + 0.5 - s.cx;
            const bool inside = s.kind == ShapeKind::Disc ? dy * dy + dx * dx <= s.half_h * s.half_h
                                                          : std::abs(dy) <= s.half_h && std::abs(dx) <= s.half_w;
            if (inside) lab[i * spec.width + j] = s.cls;
          }
        }
      }
      std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(domain) + kPixelStreamOffset, img));
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t p = 0; p < plane; ++p) {
        const auto color = class_color(static_cast<std::size_t>(lab[p]));
        for (std::size_t c = 0; c < kImageChannels; ++c) {
          const double texture = spec.texture_sigma * normal(rng);
          const double noise = shift.noise_sigma * normal(rng);
          const double v = shift.channel_gain[c] * (color[c] + texture) + shift.brightness_delta + noise;
          d.features[(img * kImageChannels + c) * plane + p] = as_f32(v);
        }
      }
    }
    truth = LabelMap(std::move(labels));
    return d;
  };

  DomainPair pair;
  LabelMap source_labels;
  pair.source = make(Domain::Source, AppearanceShift{}, source_labels);
  pair.source.labels = std::move(source_labels);
  pair.target = make(Domain::Target, spec.appearance_shift, pair.target_eval_labels);
  pair.target.labels = LabelMap::abstaining(spec.num_images * plane);
  return pair;
}

}  // namespace msq
