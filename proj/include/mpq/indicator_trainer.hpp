// SPDX-License-Identifier: Apache-2.0
//
// Joint training of the indicator bank: one learnable weight scale and one
// activation scale per (quantized layer, bit option), 2*L*n in total.
//
// One atomic step runs n + 1 forward/backward passes on the same batch:
// pass k < n assigns bit option k to every layer, pass n draws a weight-bit
// and an activation-bit index per layer uniformly at random. Gradients from
// all passes accumulate, are scaled by 1/(n+1), and feed a single optimizer
// step over the shared weights and the bank.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mpq/dataset.hpp"
#include "mpq/indicator_report.hpp"
#include "mpq/model.hpp"
#include "mpq/optim.hpp"

namespace mpq {

class ScaleBank {
 public:
  ScaleBank(std::vector<int> bits, std::vector<int> layer_ids);

  std::size_t layers() const { return layer_ids_.size(); }
  std::size_t options() const { return bits_.size(); }
  std::size_t size() const { return 2 * layers() * options(); }
  const std::vector<int>& bits() const { return bits_; }
  const std::vector<int>& layer_ids() const { return layer_ids_; }

  // l is the position in layer_ids(), i the bit option index.
  Tensor& weight(std::size_t l, std::size_t i) { return weight_.at(l * options() + i); }
  Tensor& act(std::size_t l, std::size_t i) { return act_.at(l * options() + i); }
  const Tensor& weight(std::size_t l, std::size_t i) const { return weight_.at(l * options() + i); }
  const Tensor& act(std::size_t l, std::size_t i) const { return act_.at(l * options() + i); }

  std::vector<Tensor> tensors() const;
  IndicatorReport snapshot() const;

 private:
  std::vector<int> bits_;
  std::vector<int> layer_ids_;
  std::vector<Tensor> weight_;
  std::vector<Tensor> act_;
};

// Per bank layer: (weight-bit index, activation-bit index).
struct BitAssignment {
  std::vector<std::size_t> weight_index;
  std::vector<std::size_t> act_index;

  static BitAssignment uniform(std::size_t layers, std::size_t index);
  bool operator==(const BitAssignment&) const = default;
};

struct IndicatorConfig {
  std::vector<int> bits = {2, 3, 4, 8};
  std::uint64_t steps = 300;
  std::size_t batch_size = 64;
  double lr = 0.01;        // shared weights
  double scale_lr = 0.01;  // bank
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::string schedule = "cosine";
  std::uint64_t seed = 0;
  double data_fraction = 0.5;
  std::string init_scheme = "statistics";  // statistics | uniform
  bool scale_step_grad = true;
  bool trace = false;

  void validate() const;
};

// Gradient-touch counters, [kind][bank layer * n + bit index], split by pass
// type. A touch is one backward propagation into that bank entry.
struct TouchCounters {
  std::vector<std::uint64_t> uniform_weight, uniform_act;
  std::vector<std::uint64_t> random_weight, random_act;
};

struct StepTrace {
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
  BitAssignment random_assignment;
  // Every parameter and bank value was bit-identical at the start of each pass.
  bool parameters_frozen_within_step = true;
};

struct StepMetrics {
  double mean_loss = 0.0;
  StepTrace trace;  // counts always filled; the frozen check only with trace on
};

class IndicatorSession {
 public:
  // Wires `net` (whose quantized layers define the bank) to a fresh bank and
  // draws the training subset. The network is trained in place.
  IndicatorSession(Network& net, const Split& train, const IndicatorConfig& config);

  // Sets every bank entry to its initial value. Statistics init runs one
  // uniform-bit forward per bit option on the first batch (no update).
  void initialize();

  StepMetrics atomic_update_step(const std::vector<std::size_t>& batch, double lr_scale = 1.0);

  // initialize() followed by config.steps atomic steps.
  IndicatorReport run();

  const ScaleBank& bank() const { return bank_; }
  ScaleBank& bank() { return bank_; }
  const TouchCounters& touches() const { return touches_; }
  const std::vector<std::size_t>& subset() const { return subset_; }
  std::vector<std::size_t> first_batch() const;
  // The random-pass RNG; exposed so tests can replay the draw.
  static BitAssignment draw_random(std::mt19937_64& rng, std::size_t layers, std::size_t n);
  static std::uint64_t random_stream_seed(std::uint64_t seed);

 private:
  QuantPlan make_plan(Graph* graph, const BitAssignment& a, bool uniform_pass);

  Network& net_;
  const Split& train_;
  IndicatorConfig config_;
  ScaleBank bank_;
  Sgd sgd_;
  std::vector<std::size_t> subset_;
  std::mt19937_64 assign_rng_;
  TouchCounters touches_;
  std::vector<double> loss_curve_;
  std::uint64_t steps_done_ = 0;
};

// Convenience wrapper: one session over a copy of the network.
IndicatorReport train_indicators(const Network& net, const Split& train,
                                 const IndicatorConfig& config);

}  // namespace mpq
