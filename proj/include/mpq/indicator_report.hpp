// SPDX-License-Identifier: Apache-2.0
//
// Learned importance indicators: the final per-layer, per-bit-width scale
// factors of weights and activations after joint training.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mpq {

struct IndicatorReport {
  std::vector<int> bits;       // bit options, strictly increasing
  std::vector<int> layer_ids;  // quantized layers, in layer order
  // [layer][bit index]
  std::vector<std::vector<double>> weight_scales;
  std::vector<std::vector<double>> act_scales;

  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::string init_scheme = "statistics";
  std::vector<double> loss_curve;

  std::size_t layers() const { return layer_ids.size(); }
  std::size_t options() const { return bits.size(); }
  void validate() const;
};

// importance(l, i, j) = s_a[l][j] + alpha * s_w[l][i]
class ImportanceTable {
 public:
  ImportanceTable(const IndicatorReport& report, double alpha);

  double at(std::size_t layer, std::size_t weight_index, std::size_t act_index) const {
    return values_[(layer * n_ + weight_index) * n_ + act_index];
  }
  std::size_t layers() const { return layers_; }
  std::size_t options() const { return n_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::size_t layers_ = 0;
  std::size_t n_ = 0;
  std::vector<double> values_;
};

inline ImportanceTable importance_table(const IndicatorReport& report, double alpha) {
  return ImportanceTable(report, alpha);
}

void write_indicator_report(std::ostream& os, const IndicatorReport& report);
IndicatorReport read_indicator_report(std::istream& is);

}  // namespace mpq
