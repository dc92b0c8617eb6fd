// SPDX-License-Identifier: Apache-2.0
//
// mpq-forge: indicator training, bit-width search, fine-tuning, evaluation.
// Exit codes: 0 ok, 1 other failure, 2 infeasible budget, 3 config error,
// 4 divergence.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "mpq/format.hpp"
#include "mpq/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mpq;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> bits;
  std::optional<double> alpha;
  std::optional<std::uint64_t> budget_bitops;
  std::optional<int> budget_bitops_level;
  std::optional<std::uint64_t> budget_size_bits;
  bool reversed = false;
  std::string out_dir;
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "run configuration file");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "override the run seed");
  cmd->add_option("--bits", o.bits, "bit options, e.g. 2,3,4,8");
  cmd->add_option("--alpha", o.alpha, "weight of the weight-scale term");
  cmd->add_option("--budget-bitops", o.budget_bitops, "BitOps limit");
  cmd->add_option("--budget-bitops-level", o.budget_bitops_level,
                  "BitOps limit of a uniform b-bit policy");
  cmd->add_option("--budget-size-bits", o.budget_size_bits, "model size limit in bits");
  cmd->add_flag("--reversed", o.reversed, "maximize summed importance instead");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig cfg = load_config(o.config);
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.bits) cfg.indicators.bits = parse_bit_list(*o.bits);
  if (o.alpha) cfg.search.alpha = *o.alpha;
  if (o.budget_bitops || o.budget_bitops_level) {
    cfg.search.budget_bitops = o.budget_bitops;
    cfg.search.budget_bitops_level = o.budget_bitops_level;
  }
  if (o.budget_size_bits) cfg.search.budget_size_bits = o.budget_size_bits;
  if (o.reversed) cfg.search.reversed = true;
  cfg.validate();
  return cfg;
}

fs::path out_dir_for(const Overrides& o, const RunConfig& cfg) {
  if (!o.out_dir.empty()) return o.out_dir;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  return "mpq-run";
}

void print_record(const std::string& label, const RunRecord& r, const fs::path& dir) {
  std::cout << label << (r.reused ? " (up to date, not rerun)" : "") << ": " << dir.string()
            << "\n";
  for (const auto& [k, v] : r.metrics) std::cout << "  " << k << " " << format_double(v) << "\n";
}

void print_policy(const Policy& p) {
  std::cout << "objective " << format_double(p.objective) << "  bitops " << p.total_bitops
            << "  size_bits " << p.total_size_bits << "  nodes " << p.nodes << "\n";
  for (const auto& c : p.choices) {
    std::cout << "  layer " << c.layer_id << ": W" << c.weight_bits << "A" << c.act_bits << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mpq-forge: mixed-precision bit-width allocation from learned scale factors"};
  app.require_subcommand(1);
  bool force = false;

  Overrides ti;
  auto* train_cmd = app.add_subcommand("train-indicators", "pretrain and train the indicator bank");
  add_run_flags(train_cmd, ti, true);

  Overrides so;
  std::string indicators, stats, policy_out;
  auto* search_cmd = app.add_subcommand("search", "solve the bit-width ILP (no data needed)");
  add_run_flags(search_cmd, so, false);
  search_cmd->add_option("--indicators", indicators, "indicator report")->required();
  search_cmd->add_option("--stats", stats, "layer stats (default: next to the report)");
  search_cmd->add_option("--output", policy_out, "policy file (default: policy.txt in --out-dir, else next to the report)");

  Overrides fo;
  std::string policy_in, weights_in;
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune pretrained weights under a policy");
  add_run_flags(ft_cmd, fo, true);
  ft_cmd->add_option("--policy", policy_in, "policy file")->required();
  ft_cmd->add_option("--weights", weights_in, "pretrained weights (default: <out-dir>/pretrained.bin)");

  Overrides eo;
  std::string eval_weights, eval_policy;
  auto* eval_cmd = app.add_subcommand("eval", "validation top-1 of a weight dump");
  add_run_flags(eval_cmd, eo, true);
  eval_cmd->add_option("--weights", eval_weights, "weight dump")->required();
  eval_cmd->add_option("--policy", eval_policy, "quantize per this policy");

  Overrides ro;
  auto* run_cmd = app.add_subcommand("run", "all stages end to end");
  add_run_flags(run_cmd, ro, true);
  run_cmd->add_flag("--force", force, "rerun even if an intact record exists");

  Overrides ao;
  std::string seeds_text;
  unsigned jobs = 1;
  auto* abl_cmd = app.add_subcommand("ablate-reverse", "routine vs reversed policy, shared indicators");
  add_run_flags(abl_cmd, ao, true);
  abl_cmd->add_flag("--force", force, "rerun even if intact records exist");
  abl_cmd->add_option("--seeds", seeds_text, "comma-separated seeds, one ablation each");
  abl_cmd->add_option("--jobs", jobs, "seeds run concurrently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  try {
    if (*train_cmd) {
      const auto cfg = resolve_config(ti);
      const auto dir = out_dir_for(ti, cfg);
      RunRecord rec;
      auto data = load_dataset(cfg);
      const auto res = stage_train_indicators(cfg, data, dir, rec);
      std::cout << "fp_top1 " << format_double(res.fp_top1) << "\nindicators "
                << res.indicators.string() << "\nstats " << res.stats.string() << "\n";
    } else if (*search_cmd) {
      SearchInputs in;
      in.indicators = indicators;
      in.stats = stats.empty() ? fs::path(indicators).parent_path() / "layer_stats.txt" : fs::path(stats);
      std::optional<std::uint64_t> bitops = so.budget_bitops, size = so.budget_size_bits;
      std::optional<int> level = so.budget_bitops_level;
      if (!so.config.empty()) {
        const auto cfg = load_config(so.config);
        in.alpha = cfg.search.alpha;
        in.reversed = cfg.search.reversed;
        if (!bitops && !level) {
          bitops = cfg.search.budget_bitops;
          level = cfg.search.budget_bitops_level;
        }
        if (!size) size = cfg.search.budget_size_bits;
      }
      if (so.alpha) in.alpha = *so.alpha;
      if (!(in.alpha >= 0)) throw ConfigError("alpha must be >= 0");
      if (so.reversed) in.reversed = true;
      try {
        in.budget = make_budget(read_stats_file(in.stats), bitops, level, size);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      fs::path out = policy_out;
      if (out.empty()) {
        out = (so.out_dir.empty() ? fs::path(indicators).parent_path() : fs::path(so.out_dir)) /
              "policy.txt";
      }
      const Policy p = run_search(in, out);
      print_policy(p);
      std::cout << "policy " << out.string() << "\n";
    } else if (*ft_cmd) {
      const auto cfg = resolve_config(fo);
      const auto dir = out_dir_for(fo, cfg);
      fs::create_directories(dir);
      const auto data = load_dataset(cfg);
      const fs::path w = weights_in.empty() ? dir / "pretrained.bin" : fs::path(weights_in);
      const auto res = stage_finetune(cfg, data, w, read_policy_file(policy_in), dir / "finetuned.bin");
      std::cout << "finetune_top1 " << format_double(res.top1) << "\nweights "
                << res.weights.string() << "\n";
    } else if (*eval_cmd) {
      const auto cfg = resolve_config(eo);
      const auto data = load_dataset(cfg);
      std::optional<Policy> p;
      if (!eval_policy.empty()) p = read_policy_file(eval_policy);
      std::cout << "top1 " << format_double(stage_eval(cfg, data, eval_weights, p)) << "\n";
    } else if (*run_cmd) {
      const auto cfg = resolve_config(ro);
      const auto dir = out_dir_for(ro, cfg);
      print_record("run", run_pipeline(cfg, dir, force), dir);
    } else if (*abl_cmd) {
      const auto cfg = resolve_config(ao);
      const auto dir = out_dir_for(ao, cfg);
      if (seeds_text.empty()) {
        const auto r = ablate_reverse(cfg, dir, force);
        print_record("routine", r.routine, dir / "routine");
        print_record("reversed", r.reversed, dir / "reversed");
      } else {
        std::vector<std::uint64_t> seeds;
        std::string t;
        std::stringstream ss(seeds_text);
        while (std::getline(ss, t, ',')) seeds.push_back(parse_uint(trim(t)));
        const auto rs = ablate_reverse_seeds(cfg, seeds, dir, force, jobs);
        double routine = 0, reversed = 0;
        for (std::size_t k = 0; k < rs.size(); ++k) {
          const double a = rs[k].routine.metric("finetune_top1").value_or(0);
          const double b = rs[k].reversed.metric("finetune_top1").value_or(0);
          routine += a;
          reversed += b;
          std::cout << "seed " << seeds[k] << ": routine " << format_double(a) << "  reversed "
                    << format_double(b) << "\n";
        }
        std::cout << "mean routine " << format_double(routine / rs.size()) << "  mean reversed "
                  << format_double(reversed / rs.size()) << "\n";
      }
    }
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
