// SPDX-License-Identifier: Apache-2.0
//
// Seed-deterministic source/target domain pairs and the UDS1 dataset format.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "msq/tensor.hpp"
#include "msq/types.hpp"

namespace msq {

enum class DatasetKind : std::uint32_t { Classification = 0, Segmentation = 1 };

/// Features [S x Cin x H x W] with flat per-pixel labels (S*H*W). Classification
/// samples have H = W = 1 and Cin = feature dimension.
struct Dataset {
  DatasetKind kind = DatasetKind::Classification;
  std::size_t num_classes = 0;
  Tensor features{Shape{0, 0, 1, 1}};
  LabelMap labels;

  std::size_t num_samples() const { return features.dim(0); }
  std::size_t channels() const { return features.dim(1); }
  std::size_t height() const { return features.dim(2); }
  std::size_t width() const { return features.dim(3); }
  std::size_t pixels_per_sample() const { return height() * width(); }

  /// Selected samples as [k x Cin x H x W].
  Tensor images(std::span<const std::size_t> indices) const;
  /// Selected samples flattened to [k x (Cin*H*W)].
  Tensor rows(std::span<const std::size_t> indices) const;
  /// Labels of the selected samples, concatenated.
  LabelMap labels_of(std::span<const std::size_t> indices) const;

  /// Throws on shape/label disagreement.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// A generated pair. The target dataset carries only kAbstain labels; its true
/// labels are kept apart for evaluation.
struct DomainPair {
  Dataset source;
  Dataset target;
  LabelMap target_eval_labels;

  /// Target features with the held-out labels attached (evaluation only).
  Dataset target_eval() const;
};

struct ClassificationDomainSpec {
  std::size_t num_classes = 3;
  std::size_t samples_per_class = 100;
  std::vector<std::array<double, 2>> means;
  double cov_scale = 1.0;  ///< isotropic source variance
  std::array<double, 2> target_shift{0.0, 0.0};
  double target_noise = 0.0;  ///< added to the variance for the target domain
  std::uint64_t seed = 0;

  void validate() const;
};

struct AppearanceShift {
  double brightness_delta = 0.0;
  std::array<double, 3> channel_gain{1.0, 1.0, 1.0};
  double noise_sigma = 0.0;
};

struct SegmentationDomainSpec {
  std::size_t height = 24;
  std::size_t width = 24;
  std::size_t num_classes = 3;
  std::vector<double> class_frequency_weights{8.0, 1.0, 1.0};
  std::size_t shapes_per_image = 4;
  AppearanceShift appearance_shift;  ///< applied to the target domain only
  double texture_sigma = 0.05;       ///< per-pixel color jitter in both domains
  std::size_t num_images = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kImageChannels = 3;

/// Base RGB color of a class.
std::array<double, 3> class_color(std::size_t cls);

enum class ShapeKind { Rect, Disc };

struct SceneShape {
  ShapeKind kind;
  std::int32_t cls;
  double cy, cx;
  double half_h, half_w;  ///< rect half extents; disc uses half_h as radius
};

enum class Domain : std::uint64_t { Source = 1, Target = 2 };

/// Shapes of image `index`, painted in order over a class-0 background.
std::vector<SceneShape> sample_scene(const SegmentationDomainSpec& spec, Domain domain, std::size_t index);

DomainPair gen_classification_pair(const ClassificationDomainSpec& spec);
DomainPair gen_segmentation_pair(const SegmentationDomainSpec& spec);

// --- UDS1 ----------------------------------------------------------------------
//
// Little-endian: "UDS1", u32 version = 1, u32 kind, u32 num_samples, u32 C_in,
// u32 H, u32 W, u32 num_classes, then per sample f32 features[C_in*H*W] and
// i32 labels[H*W] (-1 = abstain / held out).

inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& d);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace msq
