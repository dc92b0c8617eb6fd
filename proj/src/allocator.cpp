// SPDX-License-Identifier: Apache-2.0
#include "mpq/allocator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mpq/digest.hpp"
#include "mpq/format.hpp"

namespace mpq {

void IlpInstance::validate() const {
  if (layer_ids.empty()) throw std::invalid_argument("ilp: instance has no layers");
  if (bits.empty()) throw std::invalid_argument("ilp: empty bit-option list");
  const std::size_t l = layers(), k = combos();
  if (importance.size() != l * k || bitops.size() != l * k || size_bits.size() != l * options()) {
    throw std::invalid_argument("ilp: matrix extents do not match layers x options");
  }
  for (double v : importance) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("ilp: importance values must be finite and non-negative");
    }
  }
  budget.validate();
}

IlpInstance build_instance(const IndicatorReport& report,
                           std::span<const LayerCostStats> stats, double alpha,
                           const Budget& budget) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("build_instance: alpha must be >= 0");
  budget.validate();
  report.validate();
  if (report.layers() != stats.size()) {
    throw std::invalid_argument("build_instance: report covers " +
                                std::to_string(report.layers()) + " layers, stats cover " +
                                std::to_string(stats.size()));
  }
  for (std::size_t l = 0; l < stats.size(); ++l) {
    if (report.layer_ids[l] != stats[l].layer_id) {
      throw std::invalid_argument("build_instance: layer sets differ (report layer " +
                                  std::to_string(report.layer_ids[l]) + " vs stats layer " +
                                  std::to_string(stats[l].layer_id) + ")");
    }
    for (std::size_t i = 0; i < report.options(); ++i) {
      if (report.weight_scales[l][i] < 0.0 || report.act_scales[l][i] < 0.0) {
        throw std::invalid_argument("build_instance: negative indicator at layer " +
                                    std::to_string(report.layer_ids[l]));
      }
    }
  }
  IlpInstance inst;
  inst.layer_ids = report.layer_ids;
  inst.bits = report.bits;
  inst.alpha = alpha;
  inst.budget = budget;
  const ImportanceTable table(report, alpha);
  const std::size_t n = report.options();
  for (std::size_t l = 0; l < stats.size(); ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        inst.importance.push_back(table.at(l, i, j));
        inst.bitops.push_back(mpq::bitops(stats[l], report.bits[i], report.bits[j]));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      inst.size_bits.push_back(stats[l].params * static_cast<std::uint64_t>(report.bits[i]));
    }
  }
  inst.validate();
  return inst;
}

std::string instance_digest(const IlpInstance& inst) {
  std::ostringstream os;
  os << "ilp-instance v1\nalpha " << format_double(inst.alpha) << "\nbits";
  for (int b : inst.bits) os << ' ' << b;
  os << "\nbudget_bitops " << (inst.budget.bitops ? std::to_string(*inst.budget.bitops) : "none");
  os << "\nbudget_size_bits "
     << (inst.budget.size_bits ? std::to_string(*inst.budget.size_bits) : "none") << '\n';
  for (std::size_t l = 0; l < inst.layers(); ++l) {
    os << "layer " << inst.layer_ids[l] << '\n';
    for (std::size_t c = 0; c < inst.combos(); ++c) {
      os << format_double(inst.importance[l * inst.combos() + c]) << ' '
         << inst.bitops[l * inst.combos() + c] << '\n';
    }
    for (std::size_t i = 0; i < inst.options(); ++i) os << inst.size_at(l, i) << '\n';
  }
  return sha256_hex(os.str());
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A complete assignment, scored in canonical (layer) order.
struct Candidate {
  std::vector<std::uint32_t> combo;  // per layer, i * n + j
  double value = kInf;               // sign-adjusted objective
  std::uint64_t bitops = 0;
  bool found = false;
};

bool better(double value, std::uint64_t bitops, const std::vector<std::uint32_t>& combo,
            const Candidate& incumbent) {
  if (!incumbent.found) return true;
  if (value != incumbent.value) return value < incumbent.value;
  if (bitops != incumbent.bitops) return bitops < incumbent.bitops;
  return combo < incumbent.combo;
}

struct Resource {
  std::uint64_t limit = 0;
  std::vector<std::uint64_t> cost;      // [layer][combo]
  std::vector<std::uint64_t> min_cost;  // [layer]
};

void check_feasible(const IlpInstance& inst) {
  std::uint64_t min_bitops = 0, min_size = 0;
  for (std::size_t l = 0; l < inst.layers(); ++l) {
    std::uint64_t mb = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t ms = mb;
    for (std::size_t i = 0; i < inst.options(); ++i) {
      ms = std::min(ms, inst.size_at(l, i));
      for (std::size_t j = 0; j < inst.options(); ++j) mb = std::min(mb, inst.bitops_at(l, i, j));
    }
    min_bitops += mb;
    min_size += ms;
  }
  const bool over_bitops = inst.budget.bitops && min_bitops > *inst.budget.bitops;
  const bool over_size = inst.budget.size_bits && min_size > *inst.budget.size_bits;
  if (over_bitops || over_size) {
    std::ostringstream msg;
    msg << "infeasible budget: minimal achievable BitOps " << min_bitops;
    if (inst.budget.bitops) msg << " (limit " << *inst.budget.bitops << ")";
    msg << ", minimal achievable size " << min_size << " bits";
    if (inst.budget.size_bits) msg << " (limit " << *inst.budget.size_bits << ")";
    throw InfeasibleError(msg.str(), min_bitops, min_size);
  }
}

std::vector<Resource> make_resources(const IlpInstance& inst) {
  std::vector<Resource> out;
  const std::size_t k = inst.combos(), n = inst.options();
  auto finish = [&](Resource& r) {
    r.min_cost.resize(inst.layers());
    for (std::size_t l = 0; l < inst.layers(); ++l) {
      r.min_cost[l] = *std::min_element(r.cost.begin() + l * k, r.cost.begin() + (l + 1) * k);
    }
  };
  if (inst.budget.bitops) {
    Resource r;
    r.limit = *inst.budget.bitops;
    r.cost = inst.bitops;
    finish(r);
    out.push_back(std::move(r));
  }
  if (inst.budget.size_bits) {
    Resource r;
    r.limit = *inst.budget.size_bits;
    r.cost.resize(inst.layers() * k);
    for (std::size_t l = 0; l < inst.layers(); ++l)
      for (std::size_t c = 0; c < k; ++c) r.cost[l * k + c] = inst.size_at(l, c / n);
    finish(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> signed_values(const IlpInstance& inst, Objective sense) {
  std::vector<double> v = inst.importance;
  if (sense == Objective::maximize)
    for (double& x : v) x = -x;
  return v;
}

Policy make_policy(const IlpInstance& inst, const Candidate& best, Objective sense,
                   std::uint64_t nodes, double seconds) {
  Policy p;
  p.sense = sense;
  p.nodes = nodes;
  p.wall_seconds = seconds;
  p.instance_digest = instance_digest(inst);
  const std::size_t n = inst.options();
  double objective = 0.0;
  for (std::size_t l = 0; l < inst.layers(); ++l) {
    const std::size_t i = best.combo[l] / n, j = best.combo[l] % n;
    LayerChoice c;
    c.layer_id = inst.layer_ids[l];
    c.weight_index = static_cast<int>(i);
    c.act_index = static_cast<int>(j);
    c.weight_bits = inst.bits[i];
    c.act_bits = inst.bits[j];
    p.choices.push_back(c);
    objective += inst.importance_at(l, i, j);
    p.total_bitops += inst.bitops_at(l, i, j);
    p.total_size_bits += inst.size_at(l, i);
  }
  p.objective = objective;
  return p;
}

// Depth-first branch-and-bound over layers.
//
// Layers are visited by descending cost spread. At each node the remaining
// layers are bounded by the larger of
//   * the sum of per-layer minima over combinations that stay affordable
//     given the other remaining layers at their cheapest, and
//   * for each budget, the LP relaxation of the multiple-choice knapsack
//     (greedy over lower convex hull segments, fractional last item).
// Pruning compares against the incumbent with a small relative tolerance so
// that rounding in partial sums never discards an optimal or tied leaf;
// leaves themselves are scored exactly in canonical order.
class BranchAndBound {
 public:
  BranchAndBound(const IlpInstance& inst, Objective sense)
      : inst_(inst),
        layers_(inst.layers()),
        combos_(inst.combos()),
        values_(signed_values(inst, sense)),
        resources_(make_resources(inst)) {
    order_layers();
    build_child_orders();
    build_suffixes();
    build_hulls();
  }

  Candidate run() {
    current_.assign(layers_, 0);
    used_.assign(resources_.size(), 0);
    dfs(0, 0.0);
    return best_;
  }

  std::uint64_t nodes() const { return nodes_; }

 private:
  struct Segment {
    std::size_t layer;
    double dcost;
    double dvalue;
    double slope;
  };

  void order_layers() {
    order_.resize(layers_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::vector<std::vector<std::uint64_t>> spread(layers_,
                                                   std::vector<std::uint64_t>(resources_.size()));
    for (std::size_t l = 0; l < layers_; ++l) {
      for (std::size_t r = 0; r < resources_.size(); ++r) {
        auto first = resources_[r].cost.begin() + l * combos_;
        auto [lo, hi] = std::minmax_element(first, first + combos_);
        spread[l][r] = *hi - *lo;
      }
    }
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return spread[a] > spread[b]; });
    position_.resize(layers_);
    for (std::size_t d = 0; d < layers_; ++d) position_[order_[d]] = d;
  }

  void build_child_orders() {
    children_.resize(layers_);
    for (std::size_t l = 0; l < layers_; ++l) {
      auto& ch = children_[l];
      ch.resize(combos_);
      std::iota(ch.begin(), ch.end(), std::uint32_t{0});
      std::stable_sort(ch.begin(), ch.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double va = values_[l * combos_ + a], vb = values_[l * combos_ + b];
        if (va != vb) return va < vb;
        return inst_.bitops[l * combos_ + a] < inst_.bitops[l * combos_ + b];
      });
    }
  }

  void build_suffixes() {
    suffix_min_.assign(resources_.size(), std::vector<std::uint64_t>(layers_ + 1, 0));
    for (std::size_t r = 0; r < resources_.size(); ++r) {
      for (std::size_t d = layers_; d-- > 0;) {
        suffix_min_[r][d] = suffix_min_[r][d + 1] + resources_[r].min_cost[order_[d]];
      }
    }
  }

  void build_hulls() {
    hull_start_value_.assign(resources_.size(), std::vector<double>(layers_));
    hull_start_cost_.assign(resources_.size(), std::vector<double>(layers_));
    segments_.assign(resources_.size(), {});
    for (std::size_t r = 0; r < resources_.size(); ++r) {
      for (std::size_t l = 0; l < layers_; ++l) {
        std::vector<std::pair<double, double>> pts;  // (cost, value)
        for (std::size_t c = 0; c < combos_; ++c) {
          pts.emplace_back(static_cast<double>(resources_[r].cost[l * combos_ + c]),
                           values_[l * combos_ + c]);
        }
        std::sort(pts.begin(), pts.end());
        // Pareto front: strictly decreasing value with increasing cost.
        std::vector<std::pair<double, double>> front;
        for (const auto& p : pts) {
          if (front.empty() || p.second < front.back().second) {
            if (!front.empty() && front.back().first == p.first) continue;
            front.push_back(p);
          }
        }
        // Lower convex hull of the front.
        std::vector<std::pair<double, double>> hull;
        for (const auto& p : front) {
          while (hull.size() >= 2) {
            const auto& a = hull[hull.size() - 2];
            const auto& b = hull.back();
            const double cross =
                (b.first - a.first) * (p.second - a.second) - (b.second - a.second) * (p.first - a.first);
            if (cross <= 0.0) {
              hull.pop_back();
            } else {
              break;
            }
          }
          hull.push_back(p);
        }
        hull_start_cost_[r][l] = hull.front().first;
        hull_start_value_[r][l] = hull.front().second;
        for (std::size_t s = 1; s < hull.size(); ++s) {
          const double dc = hull[s].first - hull[s - 1].first;
          const double dv = hull[s].second - hull[s - 1].second;
          segments_[r].push_back(Segment{l, dc, dv, dv / dc});
        }
      }
      std::stable_sort(segments_[r].begin(), segments_[r].end(),
                       [](const Segment& a, const Segment& b) { return a.slope < b.slope; });
    }
  }

  double affordable_bound(std::size_t depth) const {
    double total = 0.0;
    for (std::size_t d = depth; d < layers_; ++d) {
      const std::size_t l = order_[d];
      double best = kInf;
      for (std::size_t c = 0; c < combos_; ++c) {
        bool ok = true;
        for (std::size_t r = 0; r < resources_.size() && ok; ++r) {
          const auto& res = resources_[r];
          // Budget left for this layer with every other remaining layer at its minimum.
          const std::uint64_t others = suffix_min_[r][depth] - res.min_cost[l];
          ok = used_[r] + others + res.cost[l * combos_ + c] <= res.limit;
        }
        if (ok) best = std::min(best, values_[l * combos_ + c]);
      }
      if (best == kInf) return kInf;
      total += best;
    }
    return total;
  }

  double lp_bound(std::size_t depth, std::size_t r) const {
    double value = 0.0, cost = 0.0;
    for (std::size_t d = depth; d < layers_; ++d) {
      value += hull_start_value_[r][order_[d]];
      cost += hull_start_cost_[r][order_[d]];
    }
    double cap = static_cast<double>(resources_[r].limit) - static_cast<double>(used_[r]) - cost;
    if (cap < 0.0) return kInf;
    for (const auto& s : segments_[r]) {
      if (position_[s.layer] < depth) continue;
      if (s.dcost <= cap) {
        cap -= s.dcost;
        value += s.dvalue;
      } else {
        value += s.dvalue * (cap / s.dcost);
        break;
      }
    }
    return value;
  }

  bool pruned(double bound) const {
    if (bound == kInf) return true;
    if (!best_.found) return false;
    const double tol = 1e-9 * std::max(1.0, std::abs(best_.value));
    return bound > best_.value + tol;
  }

  void dfs(std::size_t depth, double partial) {
    ++nodes_;
    if (depth == layers_) {
      leaf();
      return;
    }
    double bound = affordable_bound(depth);
    for (std::size_t r = 0; r < resources_.size() && bound != kInf; ++r) {
      bound = std::max(bound, lp_bound(depth, r));
    }
    if (pruned(partial + bound)) return;

    const std::size_t l = order_[depth];
    for (std::uint32_t c : children_[l]) {
      bool ok = true;
      for (std::size_t r = 0; r < resources_.size() && ok; ++r) {
        ok = used_[r] + resources_[r].cost[l * combos_ + c] + suffix_min_[r][depth + 1] <=
             resources_[r].limit;
      }
      if (!ok) continue;
      for (std::size_t r = 0; r < resources_.size(); ++r) used_[r] += resources_[r].cost[l * combos_ + c];
      current_[l] = c;
      dfs(depth + 1, partial + values_[l * combos_ + c]);
      for (std::size_t r = 0; r < resources_.size(); ++r) used_[r] -= resources_[r].cost[l * combos_ + c];
    }
  }

  void leaf() {
    double value = 0.0;
    std::uint64_t ops = 0;
    for (std::size_t l = 0; l < layers_; ++l) {
      value += values_[l * combos_ + current_[l]];
      ops += inst_.bitops[l * combos_ + current_[l]];
    }
    if (better(value, ops, current_, best_)) {
      best_.combo = current_;
      best_.value = value;
      best_.bitops = ops;
      best_.found = true;
    }
  }

  const IlpInstance& inst_;
  std::size_t layers_;
  std::size_t combos_;
  std::vector<double> values_;
  std::vector<Resource> resources_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> position_;
  std::vector<std::vector<std::uint32_t>> children_;
  std::vector<std::vector<std::uint64_t>> suffix_min_;  // [resource][depth]
  std::vector<std::vector<double>> hull_start_value_;   // [resource][layer]
  std::vector<std::vector<double>> hull_start_cost_;
  std::vector<std::vector<Segment>> segments_;  // [resource], sorted by slope

  std::vector<std::uint32_t> current_;
  std::vector<std::uint64_t> used_;
  Candidate best_;
  std::uint64_t nodes_ = 0;
};

Policy solve(const IlpInstance& inst, Objective sense) {
  const auto t0 = std::chrono::steady_clock::now();
  inst.validate();
  check_feasible(inst);
  BranchAndBound bb(inst, sense);
  Candidate best = bb.run();
  if (!best.found) {
    throw InfeasibleError("infeasible budget: no assignment satisfies all limits jointly", 0, 0);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return make_policy(inst, best, sense, bb.nodes(), secs);
}

}  // namespace

void check_budget_feasible(const IlpInstance& inst) { check_feasible(inst); }

Policy solve_exact(const IlpInstance& inst) { return solve(inst, Objective::minimize); }

Policy solve_reversed(const IlpInstance& inst) { return solve(inst, Objective::maximize); }

Policy brute_force_oracle(const IlpInstance& inst, Objective sense) {
  const auto t0 = std::chrono::steady_clock::now();
  inst.validate();
  const std::size_t layers = inst.layers(), k = inst.combos();
  double space = 1.0;
  for (std::size_t l = 0; l < layers; ++l) space *= static_cast<double>(k);
  if (space > 1e7) {
    throw InstanceTooLargeError("brute_force_oracle: " + format_double(space) +
                                " assignments exceed the 1e7 enumeration limit");
  }
  check_feasible(inst);
  const auto resources = make_resources(inst);
  const auto values = signed_values(inst, sense);

  Candidate best;
  std::vector<std::uint32_t> combo(layers, 0);
  std::uint64_t visited = 0;
  while (true) {
    ++visited;
    bool ok = true;
    for (const auto& r : resources) {
      std::uint64_t used = 0;
      for (std::size_t l = 0; l < layers; ++l) used += r.cost[l * k + combo[l]];
      if (used > r.limit) ok = false;
    }
    if (ok) {
      double value = 0.0;
      std::uint64_t ops = 0;
      for (std::size_t l = 0; l < layers; ++l) {
        value += values[l * k + combo[l]];
        ops += inst.bitops[l * k + combo[l]];
      }
      if (better(value, ops, combo, best)) {
        best.combo = combo;
        best.value = value;
        best.bitops = ops;
        best.found = true;
      }
    }
    // odometer, last layer fastest
    std::size_t pos = layers;
    bool wrapped = true;
    while (pos > 0) {
      --pos;
      if (++combo[pos] < k) {
        wrapped = false;
        break;
      }
      combo[pos] = 0;
    }
    if (wrapped) break;
  }
  if (!best.found) {
    throw InfeasibleError("infeasible budget: no assignment satisfies all limits jointly", 0, 0);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return make_policy(inst, best, sense, visited, secs);
}

bool policy_consistent(const IlpInstance& inst, const Policy& policy) {
  if (policy.choices.size() != inst.layers()) return false;
  double objective = 0.0;
  std::uint64_t ops = 0, size = 0;
  for (std::size_t l = 0; l < inst.layers(); ++l) {
    const auto& c = policy.choices[l];
    if (c.layer_id != inst.layer_ids[l]) return false;
    auto wi = std::find(inst.bits.begin(), inst.bits.end(), c.weight_bits);
    auto ai = std::find(inst.bits.begin(), inst.bits.end(), c.act_bits);
    if (wi == inst.bits.end() || ai == inst.bits.end()) return false;
    const std::size_t i = wi - inst.bits.begin(), j = ai - inst.bits.begin();
    objective += inst.importance_at(l, i, j);
    ops += inst.bitops_at(l, i, j);
    size += inst.size_at(l, i);
  }
  if (inst.budget.bitops && ops > *inst.budget.bitops) return false;
  if (inst.budget.size_bits && size > *inst.budget.size_bits) return false;
  return ops == policy.total_bitops && size == policy.total_size_bits &&
         objective == policy.objective;
}

void write_policy(std::ostream& os, const Policy& policy) {
  os << "policy v1\n";
  os << "sense " << (policy.sense == Objective::minimize ? "minimize" : "maximize") << "\n";
  os << "instance_digest " << policy.instance_digest << "\n";
  os << "objective " << format_double(policy.objective) << "\n";
  os << "total_bitops " << policy.total_bitops << "\n";
  os << "total_size_bits " << policy.total_size_bits << "\n";
  os << "nodes " << policy.nodes << "\n";
  os << "layers " << policy.choices.size() << "\n";
  os << "# layer weight_bits act_bits\n";
  for (const auto& c : policy.choices) {
    os << c.layer_id << ' ' << c.weight_bits << ' ' << c.act_bits << '\n';
  }
}

Policy read_policy(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "policy v1") {
    throw std::runtime_error("policy: missing 'policy v1' header");
  }
  Policy p;
  std::size_t expected = 0;
  bool have_layers = false;
  while (std::getline(is, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tok = split_ws(t);
    if (tok.size() == 2 && tok[0] == "sense") {
      if (tok[1] == "minimize") {
        p.sense = Objective::minimize;
      } else if (tok[1] == "maximize") {
        p.sense = Objective::maximize;
      } else {
        throw std::runtime_error("policy: unknown sense '" + std::string(tok[1]) + "'");
      }
    } else if (tok.size() == 2 && tok[0] == "instance_digest") {
      p.instance_digest = std::string(tok[1]);
    } else if (tok.size() == 2 && tok[0] == "objective") {
      p.objective = parse_double(tok[1]);
    } else if (tok.size() == 2 && tok[0] == "total_bitops") {
      p.total_bitops = parse_uint(tok[1]);
    } else if (tok.size() == 2 && tok[0] == "total_size_bits") {
      p.total_size_bits = parse_uint(tok[1]);
    } else if (tok.size() == 2 && tok[0] == "nodes") {
      p.nodes = parse_uint(tok[1]);
    } else if (tok.size() == 2 && tok[0] == "layers") {
      expected = parse_uint(tok[1]);
      have_layers = true;
    } else if (tok.size() == 3) {
      LayerChoice c;
      c.layer_id = static_cast<int>(parse_int(tok[0]));
      c.weight_bits = static_cast<int>(parse_int(tok[1]));
      c.act_bits = static_cast<int>(parse_int(tok[2]));
      p.choices.push_back(c);
    } else {
      throw std::runtime_error("policy: malformed line '" + line + "'");
    }
  }
  if (!have_layers || p.choices.size() != expected) {
    throw std::runtime_error("policy: layer count does not match header");
  }
  return p;
}

}  // namespace mpq
