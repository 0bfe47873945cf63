// SPDX-License-Identifier: Apache-2.0
//
// Two small networks expressed on the autodiff graph: an MLP classifier and a
// full-resolution convolutional segmenter with a low-level auxiliary head.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "msq/graph.hpp"
#include "msq/guidance.hpp"
#include "msq/tensor.hpp"

namespace msq {

struct MlpSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{16};
  std::size_t num_classes = 2;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

struct SegNetSpec {
  std::size_t in_channels = 3;
  std::size_t trunk_channels = 8;
  std::size_t trunk_depth = 3;
  std::size_t num_classes = 3;
  std::size_t tap_depth = 1;  ///< trunk block (1-based) feeding the low-level head
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const SegNetSpec&) const = default;
};

using ModelSpec = std::variant<MlpSpec, SegNetSpec>;

std::size_t num_classes(const ModelSpec& spec);
std::uint64_t init_seed(const ModelSpec& spec);

/// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases zero; a pure function of (spec, seed).
TensorMap init_params(const MlpSpec& spec, std::uint64_t seed);
TensorMap init_params(const SegNetSpec& spec, std::uint64_t seed);
TensorMap init_params(const ModelSpec& spec, std::uint64_t seed);

/// Appends the MLP to `graph` reading features from `x` [B x D]; returns the softmax node.
NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId x);

struct SegHeads {
  NodeId p_final;  ///< [(B*H*W) x C] softmax of the final head
  NodeId p_low;    ///< [(B*H*W) x C] softmax of the low-level head
};

/// Appends the segmenter to `graph` reading images from `x` [B x Cin x H x W].
SegHeads build_segnet(Graph& graph, const SegNetSpec& spec, NodeId x);

ProbMap mlp_forward(const MlpSpec& spec, const TensorMap& params, const Tensor& x);
MultiLevelOutput seg_forward(const SegNetSpec& spec, const TensorMap& params, const Tensor& x);

// --- checkpoints -------------------------------------------------------------
//
// Little-endian: "MSQP", u32 version, u32 count, then per tensor: u16 name
// length, UTF-8 name, u8 rank, u32 dims[rank], f64 data[prod(dims)].
// Tensors are written in name order.

inline constexpr std::uint32_t kCheckpointVersion = 1;
/// Reserved checkpoint entry describing the architecture.
inline constexpr const char* kModelSpecEntry = "model.spec";

std::vector<std::uint8_t> encode_tensors(const TensorMap& tensors);
TensorMap decode_tensors(std::span<const std::uint8_t> bytes);

struct Checkpoint {
  ModelSpec model;
  TensorMap params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msq
