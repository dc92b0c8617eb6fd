// SPDX-License-Identifier: Apache-2.0
//
// Per-layer compute and storage accounting.
//
// BitOps convention: bitops = MACs * b_w * b_a for every quantized layer.
// Bias additions, activations and other non-MAC work are not counted.
// Model size counts the quantized weight payload only: sum(params * b_w).
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpq {

// Architecture record for one layer. kind is one of "linear", "conv2d",
// "relu", "flatten". Only linear and conv2d carry MACs and quantizers.
struct LayerDesc {
  std::string kind;
  int layer_id = -1;  // index among MAC layers, -1 otherwise
  bool quantized = true;
  std::size_t in_features = 0, out_features = 0;
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t out_h = 0, out_w = 0;
};

struct LayerCostStats {
  int layer_id = 0;
  std::string kind;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct Budget {
  std::optional<std::uint64_t> bitops;
  std::optional<std::uint64_t> size_bits;

  // Throws std::invalid_argument when both limits are absent or zero.
  void validate() const;
};

// One record per quantized MAC layer, in layer order. Throws
// std::invalid_argument on an unknown layer kind.
std::vector<LayerCostStats> layer_stats(std::span<const LayerDesc> arch);

std::uint64_t bitops(const LayerCostStats& stats, int weight_bits, int act_bits);

std::uint64_t total_bitops(std::span<const LayerCostStats> stats,
                           std::span<const int> weight_bits, std::span<const int> act_bits);

std::uint64_t model_size_bits(std::span<const LayerCostStats> stats,
                              std::span<const int> weight_bits);

inline std::uint64_t size_bytes(std::uint64_t bits) { return (bits + 7) / 8; }

// Full-precision (32-bit) size divided by the quantized size.
double compression_rate(std::span<const LayerCostStats> stats,
                        std::span<const int> weight_bits);

void write_layer_stats(std::ostream& os, std::span<const LayerCostStats> stats);
std::vector<LayerCostStats> read_layer_stats(std::istream& is);

}  // namespace mpq
