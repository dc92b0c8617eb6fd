// SPDX-License-Identifier: Apache-2.0
//
// Bit-width allocation as a multiple-choice knapsack ILP: pick exactly one
// (weight-bit, activation-bit) combination per layer, minimizing the summed
// importance s_a[l][j] + alpha * s_w[l][i] subject to BitOps and/or model
// size limits.
//
// Tie-breaking between policies with equal objective is total and shared by
// every solver here: smaller total BitOps first, then the lexicographically
// smaller sequence of (weight index, activation index) in layer order.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpq/cost_model.hpp"
#include "mpq/indicator_report.hpp"

namespace mpq {

enum class Objective { minimize, maximize };

struct IlpInstance {
  std::vector<int> layer_ids;
  std::vector<int> bits;
  double alpha = 1.0;
  std::vector<double> importance;        // [layer][i][j]
  std::vector<std::uint64_t> bitops;     // [layer][i][j]
  std::vector<std::uint64_t> size_bits;  // [layer][i]
  Budget budget;

  std::size_t layers() const { return layer_ids.size(); }
  std::size_t options() const { return bits.size(); }
  std::size_t combos() const { return bits.size() * bits.size(); }

  double importance_at(std::size_t l, std::size_t i, std::size_t j) const {
    return importance[(l * options() + i) * options() + j];
  }
  std::uint64_t bitops_at(std::size_t l, std::size_t i, std::size_t j) const {
    return bitops[(l * options() + i) * options() + j];
  }
  std::uint64_t size_at(std::size_t l, std::size_t i) const {
    return size_bits[l * options() + i];
  }

  // Throws std::invalid_argument on inconsistent extents, negative or
  // non-finite importance, or an invalid budget.
  void validate() const;
};

IlpInstance build_instance(const IndicatorReport& report,
                           std::span<const LayerCostStats> stats, double alpha,
                           const Budget& budget);

// SHA-256 over a canonical text rendering of the instance.
std::string instance_digest(const IlpInstance& inst);

struct LayerChoice {
  int layer_id = 0;
  int weight_bits = 0;
  int act_bits = 0;
  int weight_index = -1;
  int act_index = -1;
};

struct Policy {
  std::vector<LayerChoice> choices;
  Objective sense = Objective::minimize;
  double objective = 0.0;  // summed importance of the chosen combinations
  std::uint64_t total_bitops = 0;
  std::uint64_t total_size_bits = 0;
  std::uint64_t nodes = 0;
  double wall_seconds = 0.0;
  std::string instance_digest;
};

class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::uint64_t min_bitops, std::uint64_t min_size_bits)
      : std::runtime_error(what), min_bitops_(min_bitops), min_size_bits_(min_size_bits) {}
  std::uint64_t min_bitops() const { return min_bitops_; }
  std::uint64_t min_size_bits() const { return min_size_bits_; }

 private:
  std::uint64_t min_bitops_;
  std::uint64_t min_size_bits_;
};

class InstanceTooLargeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws InfeasibleError when even the cheapest combination of every layer
// exceeds a limit.
void check_budget_feasible(const IlpInstance& inst);

// Depth-first branch-and-bound. Provably optimal; deterministic.
Policy solve_exact(const IlpInstance& inst);

// Reversed assignment: maximizes the summed importance under the same limits.
Policy solve_reversed(const IlpInstance& inst);

// Exhaustive enumeration of all n^(2L) assignments; requires n^(2L) <= 1e7.
Policy brute_force_oracle(const IlpInstance& inst, Objective sense = Objective::minimize);

// True when the policy picks one valid combination per layer, satisfies the
// budget and its stored totals match a recomputation from the instance.
bool policy_consistent(const IlpInstance& inst, const Policy& policy);

void write_policy(std::ostream& os, const Policy& policy);
Policy read_policy(std::istream& is);

}  // namespace mpq
