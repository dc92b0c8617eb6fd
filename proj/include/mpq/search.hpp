// SPDX-License-Identifier: Apache-2.0
//
// The search stage. Inputs are an indicator report and layer statistics,
// nothing else: this translation unit and everything it links carries no
// dataset or training code.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mpq/allocator.hpp"

namespace mpq {

// level^2 * total MACs: the BitOps of a uniform (level, level) policy.
std::uint64_t level_bitops(std::span<const LayerCostStats> stats, int level);

// Budget from explicit limits and/or a uniform BitOps level.
Budget make_budget(std::span<const LayerCostStats> stats, std::optional<std::uint64_t> bitops,
                   std::optional<int> bitops_level, std::optional<std::uint64_t> size_bits);

// Raises InfeasibleError before any training when the budget cannot be met
// at the smallest bit option.
void precheck_budget(std::span<const LayerCostStats> stats, const std::vector<int>& bits,
                     const Budget& budget);

struct SearchInputs {
  std::filesystem::path indicators;
  std::filesystem::path stats;
  double alpha = 1.0;
  Budget budget;
  bool reversed = false;
};

IndicatorReport read_indicator_file(const std::filesystem::path& path);
std::vector<LayerCostStats> read_stats_file(const std::filesystem::path& path);

// Builds the instance, solves it and writes the policy file.
Policy run_search(const SearchInputs& in, const std::filesystem::path& policy_out);

Policy read_policy_file(const std::filesystem::path& path);

}  // namespace mpq
