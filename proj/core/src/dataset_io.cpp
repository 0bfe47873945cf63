// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "msq/data_synth.hpp"
#include "msq/errors.hpp"

namespace msq {

namespace {

constexpr std::string_view kMagic = "UDS1";

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError(fmt::format("{} {} does not fit in u32", what, v));
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  d.validate();
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.kind));
  w.u32(to_u32(d.num_samples(), "num_samples"));
  w.u32(to_u32(d.channels(), "channels"));
  w.u32(to_u32(d.height(), "height"));
  w.u32(to_u32(d.width(), "width"));
  w.u32(to_u32(d.num_classes, "num_classes"));
  const std::size_t feat = d.channels() * d.pixels_per_sample();
  const std::size_t pix = d.pixels_per_sample();
  for (std::size_t s = 0; s < d.num_samples(); ++s) {
    for (std::size_t k = 0; k < feat; ++k) w.f32(static_cast<float>(d.features[s * feat + k]));
    for (std::size_t p = 0; p < pix; ++p) w.i32(d.labels[s * pix + p]);
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw FormatError("missing UDS1 magic", 0);
  }
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32(); version != kDatasetVersion) {
    throw FormatError(fmt::format("unsupported dataset version {}", version), version_at);
  }
  const std::size_t kind_at = r.offset();
  const auto kind = r.u32();
  if (kind > 1) throw FormatError(fmt::format("unknown dataset kind {}", kind), kind_at);
  const std::size_t samples = r.u32();
  const std::size_t channels = r.u32();
  const std::size_t height = r.u32();
  const std::size_t width = r.u32();
  const std::size_t classes_at = r.offset();
  const std::size_t classes = r.u32();
  if (classes < 2) throw FormatError(fmt::format("num_classes {} must be >= 2", classes), classes_at);
  if (channels == 0 || height == 0 || width == 0) throw FormatError("zero feature dimension", classes_at);
  if (kind == 0 && (height != 1 || width != 1)) {
    throw FormatError("classification datasets need H = W = 1", classes_at);
  }

  const std::size_t pix = height * width;
  const std::size_t feat = channels * pix;
  // Reject impossible headers before allocating.
  const std::size_t per_sample_bytes = 4 * (feat + pix);
  if (samples > 0 && r.remaining() / samples < per_sample_bytes) {
    throw FormatError(fmt::format("truncated input: {} samples need {} bytes each, {} remain", samples,
                                  per_sample_bytes, r.remaining()),
                      bytes.size());
  }

  Dataset d;
  d.kind = static_cast<DatasetKind>(kind);
  d.num_classes = classes;
  d.features = Tensor(Shape{samples, channels, height, width});
  std::vector<std::int32_t> labels(samples * pix);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < feat; ++k) {
      const std::size_t at = r.offset();
      const double v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite feature value", at);
      d.features[s * feat + k] = v;
    }
    for (std::size_t p = 0; p < pix; ++p) {
      const std::size_t at = r.offset();
      const std::int32_t y = r.i32();
      if (y != kAbstain && (y < 0 || static_cast<std::size_t>(y) >= classes)) {
        throw FormatError(fmt::format("label {} outside [0, {}) and not -1", y, classes), at);
      }
      labels[s * pix + p] = y;
    }
  }
  if (r.remaining() != 0) r.fail(fmt::format("{} trailing bytes after dataset", r.remaining()));
  d.labels = LabelMap(std::move(labels));
  return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  detail::write_file(path, encode_dataset(d));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(detail::read_file(path)); }

}  // namespace msq
