// SPDX-License-Identifier: Apache-2.0
#include "mpq/cost_model.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mpq/format.hpp"

namespace mpq {

void Budget::validate() const {
  if (!bitops && !size_bits) {
    throw std::invalid_argument("budget: at least one of the BitOps or size limits is required");
  }
  if ((bitops && *bitops == 0) || (size_bits && *size_bits == 0)) {
    throw std::invalid_argument("budget: limits must be positive");
  }
}

std::vector<LayerCostStats> layer_stats(std::span<const LayerDesc> arch) {
  std::vector<LayerCostStats> out;
  for (const auto& d : arch) {
    if (d.kind == "relu" || d.kind == "flatten") continue;
    LayerCostStats s;
    s.layer_id = d.layer_id;
    s.kind = d.kind;
    if (d.kind == "linear") {
      s.macs = static_cast<std::uint64_t>(d.in_features) * d.out_features;
      s.params = s.macs;
    } else if (d.kind == "conv2d") {
      s.params = static_cast<std::uint64_t>(d.out_channels) * d.in_channels * d.kernel_h *
                 d.kernel_w;
      s.macs = static_cast<std::uint64_t>(d.out_h) * d.out_w * s.params;
    } else {
      throw std::invalid_argument("layer_stats: unsupported layer kind '" + d.kind + "'");
    }
    if (d.quantized) out.push_back(s);
  }
  return out;
}

std::uint64_t bitops(const LayerCostStats& stats, int weight_bits, int act_bits) {
  if (weight_bits < 2 || act_bits < 2) {
    throw std::invalid_argument("bitops: bit-widths must be >= 2");
  }
  return stats.macs * static_cast<std::uint64_t>(weight_bits) *
         static_cast<std::uint64_t>(act_bits);
}

std::uint64_t total_bitops(std::span<const LayerCostStats> stats,
                           std::span<const int> weight_bits, std::span<const int> act_bits) {
  if (weight_bits.size() != stats.size() || act_bits.size() != stats.size()) {
    throw std::invalid_argument("total_bitops: expected " + std::to_string(stats.size()) +
                                " bit-widths per kind");
  }
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    total += bitops(stats[l], weight_bits[l], act_bits[l]);
  }
  return total;
}

std::uint64_t model_size_bits(std::span<const LayerCostStats> stats,
                              std::span<const int> weight_bits) {
  if (weight_bits.size() != stats.size()) {
    throw std::invalid_argument("model_size_bits: " + std::to_string(stats.size()) +
                                " layers but " + std::to_string(weight_bits.size()) +
                                " weight bit-widths");
  }
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    if (weight_bits[l] <= 0) throw std::invalid_argument("model_size_bits: non-positive bits");
    total += stats[l].params * static_cast<std::uint64_t>(weight_bits[l]);
  }
  return total;
}

double compression_rate(std::span<const LayerCostStats> stats,
                        std::span<const int> weight_bits) {
  const std::vector<int> fp(stats.size(), 32);
  return static_cast<double>(model_size_bits(stats, fp)) /
         static_cast<double>(model_size_bits(stats, weight_bits));
}

void write_layer_stats(std::ostream& os, std::span<const LayerCostStats> stats) {
  os << "layer-stats v1\n";
  os << "layers " << stats.size() << "\n";
  os << "# layer kind macs params\n";
  for (const auto& s : stats) {
    os << s.layer_id << ' ' << s.kind << ' ' << s.macs << ' ' << s.params << '\n';
  }
}

std::vector<LayerCostStats> read_layer_stats(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "layer-stats v1") {
    throw std::runtime_error("layer stats: missing 'layer-stats v1' header");
  }
  std::size_t expected = 0;
  bool have_count = false;
  std::vector<LayerCostStats> out;
  while (std::getline(is, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tok = split_ws(t);
    if (tok[0] == "layers" && tok.size() == 2) {
      expected = parse_uint(tok[1]);
      have_count = true;
      continue;
    }
    if (tok.size() != 4) throw std::runtime_error("layer stats: malformed record '" + line + "'");
    LayerCostStats s;
    s.layer_id = static_cast<int>(parse_int(tok[0]));
    s.kind = std::string(tok[1]);
    s.macs = parse_uint(tok[2]);
    s.params = parse_uint(tok[3]);
    out.push_back(std::move(s));
  }
  if (!have_count || out.size() != expected) {
    throw std::runtime_error("layer stats: record count does not match header");
  }
  return out;
}

}  // namespace mpq
