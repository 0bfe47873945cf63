// SPDX-License-Identifier: Apache-2.0

#include <limits>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "msq/errors.hpp"
#include "msq/models.hpp"

namespace msq {

namespace {

constexpr std::string_view kMagic = "MSQP";

// Architecture as a flat f64 vector: kind tag, then the spec's sizes.
Tensor describe(const ModelSpec& model) {
  std::vector<double> v;
  if (const auto* mlp = std::get_if<MlpSpec>(&model)) {
    v = {0.0, static_cast<double>(mlp->input_dim), static_cast<double>(mlp->num_classes)};
    for (std::size_t h : mlp->hidden_dims) v.push_back(static_cast<double>(h));
  } else {
    const auto& seg = std::get<SegNetSpec>(model);
    v = {1.0,
         static_cast<double>(seg.in_channels),
         static_cast<double>(seg.num_classes),
         static_cast<double>(seg.trunk_channels),
         static_cast<double>(seg.trunk_depth),
         static_cast<double>(seg.tap_depth)};
  }
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

ModelSpec parse_description(const Tensor& t) {
  const auto at = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  if (t.rank() != 1 || t.size() < 3) throw FormatError("malformed model.spec entry", 0);
  if (t[0] == 0.0) {
    MlpSpec spec{.input_dim = at(1), .hidden_dims = {}, .num_classes = at(2)};
    for (std::size_t i = 3; i < t.size(); ++i) spec.hidden_dims.push_back(at(i));
    spec.validate();
    return spec;
  }
  if (t[0] == 1.0 && t.size() == 6) {
    SegNetSpec spec{.in_channels = at(1), .trunk_channels = at(3), .trunk_depth = at(4), .num_classes = at(2),
                    .tap_depth = at(5)};
    spec.validate();
    return spec;
  }
  throw FormatError("unknown model kind in model.spec entry", 0);
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(const TensorMap& tensors) {
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw IoError("tensor name too long: " + name);
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw IoError("tensor rank too large: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

TensorMap decode_tensors(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != kMagic) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(fmt::format("unsupported checkpoint version {}", version), 4);
  const std::uint32_t count = r.u32();
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.raw(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) r.fail(fmt::format("tensor '{}' data truncated", name));
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor '" + name + "'", at);
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  TensorMap all = ckpt.params;
  all[kModelSpecEntry] = describe(ckpt.model);
  detail::write_file(path, encode_tensors(all));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  TensorMap all = decode_tensors(detail::read_file(path));
  auto node = all.extract(kModelSpecEntry);
  if (node.empty()) throw FormatError("checkpoint has no model.spec entry", 0);
  Checkpoint ckpt{parse_description(node.mapped()), std::move(all)};
  const TensorMap expected = init_params(ckpt.model, 0);
  for (const auto& [name, t] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.shape() != t.shape()) {
      throw FormatError("checkpoint parameter '" + name + "' missing or misshapen", 0);
    }
  }
  if (ckpt.params.size() != expected.size()) throw FormatError("checkpoint has unexpected parameters", 0);
  return ckpt;
}

}  // namespace msq
