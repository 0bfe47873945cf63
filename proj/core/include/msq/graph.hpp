// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense double tensors.
//
// A Graph is a static, topologically ordered op list built once per input
// shape. forward() evaluates it against named inputs and parameters into an
// Evaluation; backward() walks the recorded nodes in exact reverse order and
// returns gradients for every declared parameter. Graphs are never mutated by
// evaluation, so one Graph may be evaluated from several threads at once.

#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msq/tensor.hpp"
#include "msq/types.hpp"

namespace msq {

/// Lower clamp applied before every logarithm.
inline constexpr double kLogFloor = 1e-7;

struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

enum class OpKind {
  Input,
  Parameter,
  Constant,
  MatMul,
  Conv3x3,
  Relu,
  Add,
  AddBias,
  Scale,
  Mul,
  SoftmaxRows,
  Log,
  Sum,
  Mean,
  PixelRows,
  Loss,
};

/// Scalar loss on a probability map with its analytic gradient.
using LossFn = std::function<LossResult(const ProbMap&)>;

struct Node {
  OpKind kind;
  std::vector<NodeId> inputs{};
  Shape shape{};
  std::string name{};  // Input / Parameter only
  double factor = 1.0;  // Scale only
  Tensor constant{};  // Constant only
  LossFn loss{};  // Loss only
  bool requires_grad = false;  // a parameter is reachable upstream
};

class Graph {
 public:
  NodeId input(const std::string& name, Shape shape);
  /// Declares a parameter leaf; redeclaring a name with the same shape returns the existing node.
  NodeId parameter(const std::string& name, Shape shape);
  NodeId constant(Tensor value);

  /// [N x K] * [K x M] -> [N x M]
  NodeId matmul(NodeId a, NodeId b);
  /// x [B x Cin x H x W], weight [Cout x Cin x 3 x 3], bias [Cout]; zero padding, stride 1.
  NodeId conv3x3(NodeId x, NodeId weight, NodeId bias);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  /// x [N x M] plus bias [M] broadcast over rows.
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId scale(NodeId x, double factor);
  NodeId mul(NodeId a, NodeId b);
  NodeId softmax_rows(NodeId logits);
  /// Elementwise log of values clamped to [kLogFloor, 1].
  NodeId log(NodeId x);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  /// [B x C x H x W] -> [(B*H*W) x C], pixels in (b, h, w) row-major order.
  NodeId pixel_rows(NodeId x);
  /// Scalar loss of an [N x C] probability node.
  NodeId loss(NodeId probs, LossFn fn);

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const std::map<std::string, NodeId>& parameters() const noexcept { return parameters_; }
  const std::map<std::string, NodeId>& inputs() const noexcept { return inputs_; }

 private:
  NodeId push(Node node);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> parameters_;
  std::map<std::string, NodeId> inputs_;
};

/// Upstream gradient injected at an arbitrary node.
struct Seed {
  NodeId node;
  Tensor grad;
};

/// Cached node values of one forward pass.
class Evaluation {
 public:
  const Tensor& value(NodeId id) const { return values_.at(id.index); }
  const Tensor& operator[](NodeId id) const { return value(id); }
  /// Probability-map view of an [N x C] softmax node.
  ProbMap probs(NodeId id) const { return ProbMap(value(id)); }

 private:
  friend Evaluation forward(const Graph&, const TensorMap&, const TensorMap&);
  friend TensorMap backward(const Graph&, const Evaluation&, std::span<const Seed>);

  std::vector<Tensor> values_;
  std::vector<Tensor> loss_grads_;  // grad_wrt_probs of Loss nodes, indexed like values_
};

/// Row-wise softmax with max subtraction. Throws ShapeError unless logits are 2-D with C >= 2.
ProbMap softmax_rows(const Tensor& logits);

Evaluation forward(const Graph& graph, const TensorMap& inputs, const TensorMap& params);

/// Gradient of a scalar node with respect to every parameter.
TensorMap backward(const Graph& graph, const Evaluation& eval, NodeId scalar_output);

/// Vector-Jacobian product: accumulates all seeds and returns parameter gradients.
TensorMap backward(const Graph& graph, const Evaluation& eval, std::span<const Seed> seeds);

/// Central-difference check of a scalar node. Returns the largest per-parameter relative
/// error max|analytic - numeric| / max(max|numeric|, 1e-8).
double finite_diff_check(const Graph& graph, const TensorMap& inputs, const TensorMap& params,
                         NodeId output, double epsilon);

/// Same measure for an arbitrary scalar function of the parameters.
double finite_diff_check(const std::function<double(const TensorMap&)>& f, const TensorMap& params,
                         const TensorMap& analytic, double epsilon);

}  // namespace msq
