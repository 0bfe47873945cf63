// SPDX-License-Identifier: Apache-2.0

#include "msq/models.hpp"

#include <cmath>
#include <random>
#include <string>

#include <fmt/format.h>

#include "msq/errors.hpp"

namespace msq {

namespace {

std::string layer_name(std::string_view prefix, std::size_t index, std::string_view leaf) {
  return fmt::format("{}{}.{}", prefix, index, leaf);
}

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Shape conv_shape(std::size_t out, std::size_t in) { return {out, in, 3, 3}; }

}  // namespace

void MlpSpec::validate() const {
  if (input_dim == 0 || num_classes < 2) {
    throw ConfigError(fmt::format("mlp needs input_dim > 0 and num_classes >= 2 (got {}, {})", input_dim, num_classes));
  }
  if (hidden_dims.empty()) throw ConfigError("mlp needs at least one hidden layer");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("mlp hidden dims must be positive");
  }
}

void SegNetSpec::validate() const {
  if (in_channels == 0 || trunk_channels == 0 || num_classes < 2) {
    throw ConfigError("segnet channel counts must be positive and num_classes >= 2");
  }
  if (!(tap_depth >= 1 && tap_depth < trunk_depth)) {
    throw ConfigError(fmt::format("segnet needs 1 <= tap_depth < trunk_depth (got {}, {})", tap_depth, trunk_depth));
  }
}

std::size_t num_classes(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.num_classes; }, spec);
}

std::uint64_t init_seed(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.init_seed; }, spec);
}

TensorMap init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  TensorMap params;
  std::size_t in = spec.input_dim;
  std::vector<std::size_t> widths = spec.hidden_dims;
  widths.push_back(spec.num_classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    params.emplace(layer_name("fc", i, "weight"), uniform_fan_in({in, widths[i]}, in, rng));
    params.emplace(layer_name("fc", i, "bias"), Tensor(Shape{widths[i]}));
    in = widths[i];
  }
  return params;
}

TensorMap init_params(const SegNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  TensorMap params;
  std::size_t in = spec.in_channels;
  for (std::size_t i = 0; i < spec.trunk_depth; ++i) {
    params.emplace(layer_name("trunk", i, "weight"), uniform_fan_in(conv_shape(spec.trunk_channels, in), in * 9, rng));
    params.emplace(layer_name("trunk", i, "bias"), Tensor(Shape{spec.trunk_channels}));
    in = spec.trunk_channels;
  }
  const std::size_t head_fan_in = spec.trunk_channels * 9;
  params.emplace("low_head.weight", uniform_fan_in(conv_shape(spec.num_classes, spec.trunk_channels), head_fan_in, rng));
  params.emplace("low_head.bias", Tensor(Shape{spec.num_classes}));
  params.emplace("final_head.weight",
                 uniform_fan_in(conv_shape(spec.num_classes, spec.trunk_channels), head_fan_in, rng));
  params.emplace("final_head.bias", Tensor(Shape{spec.num_classes}));
  return params;
}

TensorMap init_params(const ModelSpec& spec, std::uint64_t seed) {
  return std::visit([seed](const auto& s) { return init_params(s, seed); }, spec);
}

NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId x) {
  spec.validate();
  const Shape& sx = graph.shape(x);
  if (sx.size() != 2 || sx[1] != spec.input_dim) {
    throw ShapeError(fmt::format("mlp expects [B x {}] features, got {}", spec.input_dim, shape_string(sx)));
  }
  std::vector<std::size_t> widths = spec.hidden_dims;
  widths.push_back(spec.num_classes);
  NodeId h = x;
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const NodeId w = graph.parameter(layer_name("fc", i, "weight"), {in, widths[i]});
    const NodeId b = graph.parameter(layer_name("fc", i, "bias"), {widths[i]});
    h = graph.add_bias(graph.matmul(h, w), b);
    if (i + 1 < widths.size()) h = graph.relu(h);
    in = widths[i];
  }
  return graph.softmax_rows(h);
}

SegHeads build_segnet(Graph& graph, const SegNetSpec& spec, NodeId x) {
  spec.validate();
  const Shape& sx = graph.shape(x);
  if (sx.size() != 4 || sx[1] != spec.in_channels) {
    throw ShapeError(fmt::format("segnet expects [B x {} x H x W] images, got {}", spec.in_channels, shape_string(sx)));
  }
  if (sx[2] < 3 || sx[3] < 3) throw ShapeError("segnet needs spatial dims >= 3, got " + shape_string(sx));

  NodeId h = x;
  NodeId tap = x;
  std::size_t in = spec.in_channels;
  for (std::size_t i = 0; i < spec.trunk_depth; ++i) {
    const NodeId w = graph.parameter(layer_name("trunk", i, "weight"), conv_shape(spec.trunk_channels, in));
    const NodeId b = graph.parameter(layer_name("trunk", i, "bias"), {spec.trunk_channels});
    h = graph.relu(graph.conv3x3(h, w, b));
    if (i + 1 == spec.tap_depth) tap = h;
    in = spec.trunk_channels;
  }
  const auto head = [&](const std::string& name, NodeId features) {
    const NodeId w = graph.parameter(name + ".weight", conv_shape(spec.num_classes, spec.trunk_channels));
    const NodeId b = graph.parameter(name + ".bias", {spec.num_classes});
    return graph.softmax_rows(graph.pixel_rows(graph.conv3x3(features, w, b)));
  };
  const NodeId p_low = head("low_head", tap);
  const NodeId p_final = head("final_head", h);
  return {p_final, p_low};
}

ProbMap mlp_forward(const MlpSpec& spec, const TensorMap& params, const Tensor& x) {
  Graph g;
  const NodeId in = g.input("x", x.shape());
  const NodeId probs = build_mlp(g, spec, in);
  return forward(g, {{"x", x}}, params).probs(probs);
}

MultiLevelOutput seg_forward(const SegNetSpec& spec, const TensorMap& params, const Tensor& x) {
  Graph g;
  const NodeId in = g.input("x", x.shape());
  const SegHeads heads = build_segnet(g, spec, in);
  const Evaluation eval = forward(g, {{"x", x}}, params);
  return MultiLevelOutput{eval.probs(heads.p_final), eval.probs(heads.p_low)};
}

}  // namespace msq
