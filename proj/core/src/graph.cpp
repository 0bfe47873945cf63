// SPDX-License-Identifier: Apache-2.0

#include "msq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <fmt/format.h>

#include "msq/errors.hpp"

namespace msq {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Gradient accumulator of a node, allocated on first use.
Tensor& grad_slot(std::vector<Tensor>& grads, NodeId id, const Shape& shape) {
  Tensor& g = grads[id.index];
  if (g.shape() != shape) g = Tensor(shape);
  return g;
}

struct ConvDims {
  std::size_t batch, in_ch, out_ch, height, width;
};

ConvDims conv_dims(const Shape& x, const Shape& w) {
  return {x[0], x[1], w[0], x[2], x[3]};
}

void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  const auto d = conv_dims(x.shape(), w.shape());
  const std::size_t plane = d.height * d.width;
  const auto h = static_cast<long>(d.height);
  const auto wd = static_cast<long>(d.width);
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      double* out = &y[(n * d.out_ch + o) * plane];
      std::fill(out, out + plane, b[o]);
      for (std::size_t c = 0; c < d.in_ch; ++c) {
        const double* in = &x[(n * d.in_ch + c) * plane];
        const double* k = &w[(o * d.in_ch + c) * 9];
        for (long ky = 0; ky < 3; ++ky) {
          for (long kx = 0; kx < 3; ++kx) {
            const double kv = k[ky * 3 + kx];
            const long y0 = std::max(0L, 1 - ky), y1 = std::min(h, h + 1 - ky);
            const long x0 = std::max(0L, 1 - kx), x1 = std::min(wd, wd + 1 - kx);
            for (long i = y0; i < y1; ++i) {
              const long row = (i + ky - 1) * wd + (kx - 1);
              double* dst = out + i * wd;
              for (long j = x0; j < x1; ++j) dst[j] += kv * in[row + j];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb) {
  const auto d = conv_dims(x.shape(), w.shape());
  const std::size_t plane = d.height * d.width;
  const auto h = static_cast<long>(d.height);
  const auto wd = static_cast<long>(d.width);
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      const double* g = &gy[(n * d.out_ch + o) * plane];
      if (gb != nullptr) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[i];
        (*gb)[o] += acc;
      }
      for (std::size_t c = 0; c < d.in_ch; ++c) {
        const double* in = &x[(n * d.in_ch + c) * plane];
        const double* k = &w[(o * d.in_ch + c) * 9];
        for (long ky = 0; ky < 3; ++ky) {
          for (long kx = 0; kx < 3; ++kx) {
            const long y0 = std::max(0L, 1 - ky), y1 = std::min(h, h + 1 - ky);
            const long x0 = std::max(0L, 1 - kx), x1 = std::min(wd, wd + 1 - kx);
            const long shift = (ky - 1) * wd + (kx - 1);
            if (gw != nullptr) {
              double acc = 0.0;
              for (long i = y0; i < y1; ++i) {
                for (long j = x0; j < x1; ++j) acc += g[i * wd + j] * in[i * wd + j + shift];
              }
              (*gw)[(o * d.in_ch + c) * 9 + static_cast<std::size_t>(ky * 3 + kx)] += acc;
            }
            if (gx != nullptr) {
              double* dst = &(*gx)[(n * d.in_ch + c) * plane];
              const double kv = k[ky * 3 + kx];
              for (long i = y0; i < y1; ++i) {
                for (long j = x0; j < x1; ++j) dst[i * wd + j + shift] += kv * g[i * wd + j];
              }
            }
          }
        }
      }
    }
  }
}

void softmax_into(const Tensor& logits, Tensor& out) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = &logits[i * c];
    double* p = &out[i * c];
    const double mx = *std::max_element(z, z + c);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      p[k] = std::exp(z[k] - mx);
      total += p[k];
    }
    for (std::size_t k = 0; k < c; ++k) p[k] /= total;
  }
}

double clamp_prob(double x) { return std::clamp(x, kLogFloor, 1.0); }

}  // namespace

// --- graph construction ---------------------------------------------------

void Graph::check(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw ContractError(fmt::format("node {} does not belong to this graph", id.index));
  }
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    check(in);
    node.requires_grad = node.requires_grad || nodes_[in.index].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::input(const std::string& name, Shape shape) {
  if (inputs_.contains(name) || parameters_.contains(name)) {
    throw ContractError("duplicate graph leaf name '" + name + "'");
  }
  Node n{.kind = OpKind::Input, .shape = std::move(shape), .name = name};
  const NodeId id = push(std::move(n));
  inputs_.emplace(name, id);
  return id;
}

NodeId Graph::parameter(const std::string& name, Shape shape) {
  if (auto it = parameters_.find(name); it != parameters_.end()) {
    require(nodes_[it->second.index].shape == shape,
            fmt::format("parameter '{}' redeclared with shape {}", name, shape_string(shape)));
    return it->second;
  }
  if (inputs_.contains(name)) throw ContractError("duplicate graph leaf name '" + name + "'");
  Node n{.kind = OpKind::Parameter, .shape = std::move(shape), .name = name, .requires_grad = true};
  const NodeId id = push(std::move(n));
  parameters_.emplace(name, id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  Shape shape = value.shape();
  return push(Node{.kind = OpKind::Constant, .shape = std::move(shape), .constant = std::move(value)});
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
          fmt::format("matmul shape mismatch {} * {}", shape_string(sa), shape_string(sb)));
  return push(Node{.kind = OpKind::MatMul, .inputs = {a, b}, .shape = {sa[0], sb[1]}});
}

NodeId Graph::conv3x3(NodeId x, NodeId weight, NodeId bias) {
  check(x);
  check(weight);
  check(bias);
  const Shape& sx = shape(x);
  const Shape& sw = shape(weight);
  const Shape& sb = shape(bias);
  require(sx.size() == 4, "conv3x3 input must be 4-D, got " + shape_string(sx));
  require(sw.size() == 4 && sw[1] == sx[1] && sw[2] == 3 && sw[3] == 3,
          fmt::format("conv3x3 weight {} incompatible with input {}", shape_string(sw), shape_string(sx)));
  require(sb.size() == 1 && sb[0] == sw[0], "conv3x3 bias shape " + shape_string(sb));
  return push(Node{.kind = OpKind::Conv3x3, .inputs = {x, weight, bias}, .shape = {sx[0], sw[0], sx[2], sx[3]}});
}

NodeId Graph::relu(NodeId x) {
  check(x);
  return push(Node{.kind = OpKind::Relu, .inputs = {x}, .shape = shape(x)});
}

NodeId Graph::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  require(shape(a) == shape(b),
          fmt::format("add shape mismatch {} + {}", shape_string(shape(a)), shape_string(shape(b))));
  return push(Node{.kind = OpKind::Add, .inputs = {a, b}, .shape = shape(a)});
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  check(x);
  check(bias);
  const Shape& sx = shape(x);
  const Shape& sb = shape(bias);
  require(sx.size() == 2 && sb.size() == 1 && sb[0] == sx[1],
          fmt::format("add_bias shape mismatch {} + {}", shape_string(sx), shape_string(sb)));
  return push(Node{.kind = OpKind::AddBias, .inputs = {x, bias}, .shape = sx});
}

NodeId Graph::scale(NodeId x, double factor) {
  check(x);
  return push(Node{.kind = OpKind::Scale, .inputs = {x}, .shape = shape(x), .factor = factor});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  require(shape(a) == shape(b),
          fmt::format("mul shape mismatch {} * {}", shape_string(shape(a)), shape_string(shape(b))));
  return push(Node{.kind = OpKind::Mul, .inputs = {a, b}, .shape = shape(a)});
}

NodeId Graph::softmax_rows(NodeId logits) {
  check(logits);
  const Shape& s = shape(logits);
  require(s.size() == 2, "softmax_rows needs a 2-D input, got " + shape_string(s));
  require(s[1] >= 2, "softmax_rows needs at least 2 classes");
  return push(Node{.kind = OpKind::SoftmaxRows, .inputs = {logits}, .shape = s});
}

NodeId Graph::log(NodeId x) {
  check(x);
  return push(Node{.kind = OpKind::Log, .inputs = {x}, .shape = shape(x)});
}

NodeId Graph::sum(NodeId x) {
  check(x);
  return push(Node{.kind = OpKind::Sum, .inputs = {x}, .shape = {}});
}

NodeId Graph::mean(NodeId x) {
  check(x);
  require(shape_size(shape(x)) > 0, "mean of an empty tensor");
  return push(Node{.kind = OpKind::Mean, .inputs = {x}, .shape = {}});
}

NodeId Graph::pixel_rows(NodeId x) {
  check(x);
  const Shape& s = shape(x);
  require(s.size() == 4, "pixel_rows needs a 4-D input, got " + shape_string(s));
  return push(Node{.kind = OpKind::PixelRows, .inputs = {x}, .shape = {s[0] * s[2] * s[3], s[1]}});
}

NodeId Graph::loss(NodeId probs, LossFn fn) {
  check(probs);
  require(shape(probs).size() == 2, "loss needs an [N x C] probability node");
  if (!fn) throw ContractError("loss node without a loss function");
  return push(Node{.kind = OpKind::Loss, .inputs = {probs}, .shape = {}, .loss = std::move(fn)});
}

// --- evaluation -------------------------------------------------------------

ProbMap softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "softmax_rows needs a 2-D input, got " + shape_string(logits.shape()));
  require(logits.dim(1) >= 2, "softmax_rows needs at least 2 classes");
  Tensor out(logits.shape());
  softmax_into(logits, out);
  return ProbMap(std::move(out));
}

Evaluation forward(const Graph& graph, const TensorMap& inputs, const TensorMap& params) {
  Evaluation eval;
  eval.values_.resize(graph.size());
  eval.loss_grads_.resize(graph.size());
  auto& v = eval.values_;

  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Node& node = graph.node(NodeId{i});
    const auto in = [&](std::size_t k) -> const Tensor& { return v[node.inputs[k].index]; };
    Tensor out;
    switch (node.kind) {
      case OpKind::Input:
      case OpKind::Parameter: {
        const TensorMap& source = node.kind == OpKind::Input ? inputs : params;
        auto it = source.find(node.name);
        if (it == source.end()) {
          throw ShapeError(fmt::format("missing {} '{}'", node.kind == OpKind::Input ? "input" : "parameter",
                                       node.name));
        }
        require(it->second.shape() == node.shape,
                fmt::format("'{}' has shape {}, graph expects {}", node.name, shape_string(it->second.shape()),
                            shape_string(node.shape)));
        out = it->second;
        break;
      }
      case OpKind::Constant:
        out = node.constant;
        break;
      case OpKind::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        out = Tensor(node.shape);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t t = 0; t < k; ++t) {
            const double av = a[r * k + t];
            for (std::size_t c = 0; c < m; ++c) out[r * m + c] += av * b[t * m + c];
          }
        }
        break;
      }
      case OpKind::Conv3x3:
        out = Tensor(node.shape);
        conv_forward(in(0), in(1), in(2), out);
        break;
      case OpKind::Relu:
        out = in(0);
        for (double& x : out.values()) x = x > 0.0 ? x : 0.0;
        break;
      case OpKind::Add:
        out = in(0);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += in(1)[j];
        break;
      case OpKind::AddBias: {
        out = in(0);
        const std::size_t m = node.shape[1];
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += in(1)[j % m];
        break;
      }
      case OpKind::Scale:
        out = in(0);
        for (double& x : out.values()) x *= node.factor;
        break;
      case OpKind::Mul:
        out = in(0);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] *= in(1)[j];
        break;
      case OpKind::SoftmaxRows:
        out = Tensor(node.shape);
        softmax_into(in(0), out);
        break;
      case OpKind::Log:
        out = in(0);
        for (double& x : out.values()) x = std::log(clamp_prob(x));
        break;
      case OpKind::Sum: {
        double acc = 0.0;
        for (double x : in(0).values()) acc += x;
        out = Tensor::scalar(acc);
        break;
      }
      case OpKind::Mean: {
        double acc = 0.0;
        for (double x : in(0).values()) acc += x;
        out = Tensor::scalar(acc / static_cast<double>(in(0).size()));
        break;
      }
      case OpKind::PixelRows: {
        const Tensor& x = in(0);
        const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
        out = Tensor(node.shape);
        for (std::size_t n = 0; n < b; ++n) {
          for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t p = 0; p < plane; ++p) out[(n * plane + p) * c + k] = x[(n * c + k) * plane + p];
          }
        }
        break;
      }
      case OpKind::Loss: {
        LossResult r = node.loss(ProbMap(in(0)));
        require(r.grad_wrt_probs.shape() == in(0).shape(), "loss gradient shape differs from its input");
        out = Tensor::scalar(r.value);
        eval.loss_grads_[i] = std::move(r.grad_wrt_probs);
        break;
      }
    }
    v[i] = std::move(out);
  }
  return eval;
}

TensorMap backward(const Graph& graph, const Evaluation& eval, NodeId scalar_output) {
  if (scalar_output.index >= graph.size()) throw ContractError("output node does not belong to this graph");
  if (shape_size(graph.shape(scalar_output)) != 1) {
    throw ContractError("backward needs a scalar output, got shape " + shape_string(graph.shape(scalar_output)));
  }
  const Seed seed{scalar_output, Tensor::filled(graph.shape(scalar_output), 1.0)};
  return backward(graph, eval, std::span<const Seed>(&seed, 1));
}

TensorMap backward(const Graph& graph, const Evaluation& eval, std::span<const Seed> seeds) {
  if (eval.values_.size() != graph.size()) throw ContractError("evaluation does not match graph");
  std::vector<Tensor> grads(graph.size());
  std::vector<bool> live(graph.size(), false);
  const auto& v = eval.values_;

  for (const Seed& s : seeds) {
    if (s.node.index >= graph.size()) throw ContractError("seed node does not belong to this graph");
    require(s.grad.shape() == graph.shape(s.node),
            fmt::format("seed shape {} differs from node shape {}", shape_string(s.grad.shape()),
                        shape_string(graph.shape(s.node))));
    Tensor& g = grad_slot(grads, s.node, graph.shape(s.node));
    if (!live[s.node.index]) {
      g = s.grad;
      live[s.node.index] = true;
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += s.grad[j];
    }
  }

  // Returns the accumulator of input k, or nullptr when no parameter lies upstream of it.
  const auto target = [&](const Node& node, std::size_t k) -> Tensor* {
    const NodeId id = node.inputs[k];
    if (!graph.node(id).requires_grad) return nullptr;
    Tensor& g = grad_slot(grads, id, graph.shape(id));
    live[id.index] = true;
    return &g;
  };

  for (std::size_t i = graph.size(); i-- > 0;) {
    if (!live[i]) continue;
    const Node& node = graph.node(NodeId{i});
    if (!node.requires_grad) continue;
    const Tensor& gy = grads[i];
    const auto in = [&](std::size_t k) -> const Tensor& { return v[node.inputs[k].index]; };

    switch (node.kind) {
      case OpKind::Input:
      case OpKind::Parameter:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        if (Tensor* ga = target(node, 0)) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t t = 0; t < k; ++t) {
              double acc = 0.0;
              for (std::size_t c = 0; c < m; ++c) acc += gy[r * m + c] * b[t * m + c];
              (*ga)[r * k + t] += acc;
            }
          }
        }
        if (Tensor* gb = target(node, 1)) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t t = 0; t < k; ++t) {
              const double av = a[r * k + t];
              for (std::size_t c = 0; c < m; ++c) (*gb)[t * m + c] += av * gy[r * m + c];
            }
          }
        }
        break;
      }
      case OpKind::Conv3x3:
        conv_backward(in(0), in(1), gy, target(node, 0), target(node, 1), target(node, 2));
        break;
      case OpKind::Relu:
        if (Tensor* gx = target(node, 0)) {
          for (std::size_t j = 0; j < gy.size(); ++j) {
            if (in(0)[j] > 0.0) (*gx)[j] += gy[j];
          }
        }
        break;
      case OpKind::Add:
        for (std::size_t k = 0; k < 2; ++k) {
          if (Tensor* gx = target(node, k)) {
            for (std::size_t j = 0; j < gy.size(); ++j) (*gx)[j] += gy[j];
          }
        }
        break;
      case OpKind::AddBias: {
        if (Tensor* gx = target(node, 0)) {
          for (std::size_t j = 0; j < gy.size(); ++j) (*gx)[j] += gy[j];
        }
        if (Tensor* gb = target(node, 1)) {
          const std::size_t m = node.shape[1];
          for (std::size_t j = 0; j < gy.size(); ++j) (*gb)[j % m] += gy[j];
        }
        break;
      }
      case OpKind::Scale:
        if (Tensor* gx = target(node, 0)) {
          for (std::size_t j = 0; j < gy.size(); ++j) (*gx)[j] += node.factor * gy[j];
        }
        break;
      case OpKind::Mul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (Tensor* ga = target(node, 0)) {
          for (std::size_t j = 0; j < gy.size(); ++j) (*ga)[j] += gy[j] * b[j];
        }
        if (Tensor* gb = target(node, 1)) {
          for (std::size_t j = 0; j < gy.size(); ++j) (*gb)[j] += gy[j] * a[j];
        }
        break;
      }
      case OpKind::SoftmaxRows:
        if (Tensor* gx = target(node, 0)) {
          const Tensor& p = v[i];
          const std::size_t n = node.shape[0], c = node.shape[1];
          for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t k = 0; k < c; ++k) dot += gy[r * c + k] * p[r * c + k];
            for (std::size_t k = 0; k < c; ++k) (*gx)[r * c + k] += p[r * c + k] * (gy[r * c + k] - dot);
          }
        }
        break;
      case OpKind::Log:
        if (Tensor* gx = target(node, 0)) {
          for (std::size_t j = 0; j < gy.size(); ++j) {
            const double x = in(0)[j];
            if (x >= kLogFloor && x <= 1.0) (*gx)[j] += gy[j] / x;
          }
        }
        break;
      case OpKind::Sum:
        if (Tensor* gx = target(node, 0)) {
          for (double& g : gx->values()) g += gy[0];
        }
        break;
      case OpKind::Mean:
        if (Tensor* gx = target(node, 0)) {
          const double share = gy[0] / static_cast<double>(gx->size());
          for (double& g : gx->values()) g += share;
        }
        break;
      case OpKind::PixelRows:
        if (Tensor* gx = target(node, 0)) {
          const Shape& s = graph.shape(node.inputs[0]);
          const std::size_t b = s[0], c = s[1], plane = s[2] * s[3];
          for (std::size_t n = 0; n < b; ++n) {
            for (std::size_t k = 0; k < c; ++k) {
              for (std::size_t p = 0; p < plane; ++p) (*gx)[(n * c + k) * plane + p] += gy[(n * plane + p) * c + k];
            }
          }
        }
        break;
      case OpKind::Loss:
        if (Tensor* gx = target(node, 0)) {
          const Tensor& lg = eval.loss_grads_[i];
          for (std::size_t j = 0; j < lg.size(); ++j) (*gx)[j] += gy[0] * lg[j];
        }
        break;
    }
  }

  TensorMap out;
  for (const auto& [name, id] : graph.parameters()) {
    out.emplace(name, live[id.index] ? grads[id.index] : Tensor(graph.shape(id)));
  }
  return out;
}

// --- finite differences ----------------------------------------------------

double finite_diff_check(const std::function<double(const TensorMap&)>& f, const TensorMap& params,
                         const TensorMap& analytic, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw DomainError(fmt::format("finite-difference epsilon {} outside (0, 1e-3]", epsilon));
  }
  TensorMap work = params;
  double worst = 0.0;
  for (auto& [name, tensor] : work) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw ContractError("no analytic gradient for parameter '" + name + "'");
    require(it->second.shape() == tensor.shape(), "analytic gradient shape differs for '" + name + "'");
    double max_diff = 0.0;
    double max_numeric = 0.0;
    for (std::size_t j = 0; j < tensor.size(); ++j) {
      const double saved = tensor[j];
      tensor[j] = saved + epsilon;
      const double up = f(work);
      tensor[j] = saved - epsilon;
      const double down = f(work);
      tensor[j] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      max_diff = std::max(max_diff, std::abs(it->second[j] - numeric));
      max_numeric = std::max(max_numeric, std::abs(numeric));
    }
    worst = std::max(worst, max_diff / std::max(max_numeric, 1e-8));
  }
  return worst;
}

double finite_diff_check(const Graph& graph, const TensorMap& inputs, const TensorMap& params, NodeId output,
                         double epsilon) {
  const TensorMap analytic = backward(graph, forward(graph, inputs, params), output);
  const auto f = [&](const TensorMap& p) { return forward(graph, inputs, p).value(output).item(); };
  return finite_diff_check(f, params, analytic, epsilon);
}

}  // namespace msq
