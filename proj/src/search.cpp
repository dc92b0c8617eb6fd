// SPDX-License-Identifier: Apache-2.0
#include "mpq/search.hpp"

#include <chrono>
#include <fstream>
#include <stdexcept>

namespace mpq {

std::uint64_t level_bitops(std::span<const LayerCostStats> stats, int level) {
  std::uint64_t total = 0;
  for (const auto& s : stats) total += bitops(s, level, level);
  return total;
}

Budget make_budget(std::span<const LayerCostStats> stats, std::optional<std::uint64_t> bitops_limit,
                   std::optional<int> bitops_level, std::optional<std::uint64_t> size_bits) {
  if (bitops_limit && bitops_level) {
    throw std::invalid_argument("give a BitOps limit or a BitOps level, not both");
  }
  Budget b;
  b.bitops = bitops_limit;
  if (bitops_level) b.bitops = level_bitops(stats, *bitops_level);
  b.size_bits = size_bits;
  b.validate();
  return b;
}

void precheck_budget(std::span<const LayerCostStats> stats, const std::vector<int>& bits,
                     const Budget& budget) {
  IndicatorReport r;
  r.bits = bits;
  for (const auto& s : stats) {
    r.layer_ids.push_back(s.layer_id);
    r.weight_scales.emplace_back(bits.size(), 1.0);
    r.act_scales.emplace_back(bits.size(), 1.0);
  }
  check_budget_feasible(build_instance(r, stats, 1.0, budget));
}

IndicatorReport read_indicator_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open indicator report " + path.string());
  return read_indicator_report(in);
}

std::vector<LayerCostStats> read_stats_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layer stats " + path.string());
  return read_layer_stats(in);
}

Policy read_policy_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy " + path.string());
  return read_policy(in);
}

Policy run_search(const SearchInputs& in, const std::filesystem::path& policy_out) {
  const auto report = read_indicator_file(in.indicators);
  const auto stats = read_stats_file(in.stats);
  const auto inst = build_instance(report, stats, in.alpha, in.budget);
  const auto t0 = std::chrono::steady_clock::now();
  Policy p = in.reversed ? solve_reversed(inst) : solve_exact(inst);
  p.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!policy_out.empty()) {
    if (policy_out.has_parent_path()) std::filesystem::create_directories(policy_out.parent_path());
    std::ofstream out(policy_out);
    if (!out) throw std::runtime_error("cannot write policy " + policy_out.string());
    write_policy(out, p);
  }
  return p;
}

}  // namespace mpq
