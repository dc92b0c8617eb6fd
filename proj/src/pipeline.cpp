// SPDX-License-Identifier: Apache-2.0
#include "mpq/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "mpq/digest.hpp"
#include "mpq/format.hpp"

namespace mpq {

namespace fs = std::filesystem;

std::optional<double> RunRecord::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  return std::nullopt;
}

const RunRecord::Artifact* RunRecord::artifact(const std::string& name) const {
  for (const auto& a : artifacts)
    if (a.name == name) return &a;
  return nullptr;
}

void append_run_record(const fs::path& file, const RunRecord& r) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + file.string());
  out << "record v1\nconfig_digest " << r.config_digest << "\n";
  for (const auto& a : r.artifacts) {
    out << "artifact " << a.name << ' ' << a.sha256 << ' ' << a.path.generic_string() << "\n";
  }
  for (const auto& [k, v] : r.metrics) out << "metric " << k << ' ' << format_double(v) << "\n";
  for (const auto& [k, v] : r.wall_seconds) out << "time " << k << ' ' << format_double(v) << "\n";
  out << "end\n";
}

std::vector<RunRecord> read_run_records(const fs::path& file) {
  std::vector<RunRecord> out;
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  std::optional<RunRecord> cur;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "record") {
      if (cur) fail("record not terminated");
      cur.emplace();
    } else if (!cur) {
      fail("content outside a record");
    } else if (tok[0] == "config_digest" && tok.size() == 2) {
      cur->config_digest = std::string(tok[1]);
    } else if (tok[0] == "artifact" && tok.size() >= 4) {
      // The path is the rest of the line and may contain spaces.
      const auto pos = static_cast<std::size_t>(tok[3].data() - line.data());
      cur->artifacts.push_back({std::string(tok[1]), fs::path(line.substr(pos)), std::string(tok[2])});
    } else if ((tok[0] == "metric" || tok[0] == "time") && tok.size() == 3) {
      auto& dst = tok[0] == "metric" ? cur->metrics : cur->wall_seconds;
      dst.emplace_back(std::string(tok[1]), parse_double(tok[2]));
    } else if (tok[0] == "end") {
      out.push_back(std::move(*cur));
      cur.reset();
    } else {
      fail("unrecognized line");
    }
  }
  // A trailing unterminated block is an interrupted run; ignore it.
  return out;
}

bool record_intact(const RunRecord& record, const fs::path& base) {
  for (const auto& a : record.artifacts) {
    const fs::path p = base / a.path;
    if (!fs::exists(p) || file_sha256_hex(p) != a.sha256) return false;
  }
  return true;
}

namespace {

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  const std::string prefix = std::string("stage ") + stage + ": ";
  try {
    return f();
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(prefix + e.what(), e.min_bitops(), e.min_size_bits());
  } catch (const DivergenceError& e) {
    throw DivergenceError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void add_artifact(RunRecord& rec, const fs::path& dir, const std::string& name,
                  const fs::path& path) {
  rec.artifacts.push_back({name, fs::relative(path, dir), file_sha256_hex(path)});
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string scale_name(int layer_id, const char* kind) {
  return "layer" + std::to_string(layer_id) + "." + kind + "_scale";
}

std::optional<RunRecord> find_record(const fs::path& dir, const std::string& digest) {
  const auto records = read_run_records(dir / kRunRecordFile);
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->config_digest == digest && record_intact(*it, dir)) {
      RunRecord r = *it;
      r.reused = true;
      return r;
    }
  }
  return std::nullopt;
}

}  // namespace

DatasetHandle load_dataset(const RunConfig& cfg) {
  if (cfg.data.source == "idx") {
    return load_idx_dataset(cfg.data.train_images, cfg.data.train_labels, cfg.data.val_images,
                            cfg.data.val_labels);
  }
  return synth_dataset(cfg.data.synth);
}

Network build_model(const RunConfig& cfg, const DatasetMeta& meta) {
  ModelOptions mo;
  mo.name = cfg.model;
  mo.input_shape = meta.input_shape;
  mo.classes = meta.classes;
  mo.hidden = cfg.hidden;
  mo.seed = cfg.seed;
  mo.exempt_first_last = cfg.exempt_first_last;
  try {
    return make_model(mo);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<LayerCostStats> model_stats(const Network& net) {
  const auto arch = net.arch();
  return layer_stats(arch);
}

Budget resolve_budget(const RunConfig& cfg, std::span<const LayerCostStats> stats) {
  try {
    return make_budget(stats, cfg.search.budget_bitops, cfg.search.budget_bitops_level,
                       cfg.search.budget_size_bits);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

IndicatorStageResult stage_train_indicators(const RunConfig& cfg, const DatasetHandle& data,
                                            const fs::path& dir, RunRecord& record) {
  fs::create_directories(dir);
  IndicatorStageResult res;
  Network net = build_model(cfg, data.meta);
  auto t0 = Clock::now();
  in_stage("pretrain", [&] { return train_full_precision(net, data.train, cfg.pretrain); });
  res.fp_top1 = evaluate(net, data.val);
  record.wall_seconds.emplace_back("pretrain", seconds_since(t0));
  res.pretrained = dir / "pretrained.bin";
  save_tensors(res.pretrained, net.named_parameters());

  t0 = Clock::now();
  const auto report =
      in_stage("indicators", [&] { return train_indicators(net, data.train, cfg.indicators); });
  record.wall_seconds.emplace_back("indicators", seconds_since(t0));
  res.indicators = dir / "indicators.txt";
  res.stats = dir / "layer_stats.txt";
  {
    std::ofstream out(res.indicators);
    write_indicator_report(out, report);
    std::ofstream st(res.stats);
    write_layer_stats(st, model_stats(net));
    if (!out || !st) throw std::runtime_error("cannot write indicator artifacts in " + dir.string());
  }
  return res;
}

FinetuneStageResult stage_finetune(const RunConfig& cfg, const DatasetHandle& data,
                                   const fs::path& pretrained, const Policy& policy,
                                   const fs::path& weights_out) {
  Network net = build_model(cfg, data.meta);
  load_parameters(net, load_tensors(pretrained));
  auto ft = in_stage("finetune", [&] { return finetune_with_policy(net, policy, data, cfg.finetune); });
  auto dump = net.named_parameters();
  for (std::size_t id = 0; id < ft.plan.size(); ++id) {
    if (!ft.plan[id]) continue;
    dump.emplace_back(scale_name(static_cast<int>(id), "w"), ft.plan[id]->weight_scale);
    dump.emplace_back(scale_name(static_cast<int>(id), "a"), ft.plan[id]->act_scale);
  }
  save_tensors(weights_out, dump);
  return {ft.val_top1, weights_out};
}

double stage_eval(const RunConfig& cfg, const DatasetHandle& data, const fs::path& weights,
                  const std::optional<Policy>& policy) {
  Network net = build_model(cfg, data.meta);
  const auto dump = load_tensors(weights);
  load_parameters(net, dump);
  QuantPlan plan;
  if (policy) {
    plan.resize(net.mac_layer_count());
    auto find = [&](const std::string& name) {
      for (const auto& [k, t] : dump)
        if (k == name) return t;
      throw std::runtime_error("weight dump " + weights.string() + " lacks '" + name + "'");
    };
    const auto ids = net.quantized_layer_ids();
    if (policy->choices.size() != ids.size()) {
      throw std::invalid_argument("policy does not cover the model's quantized layers");
    }
    for (const auto& c : policy->choices) {
      if (c.weight_bits >= 32 && c.act_bits >= 32) continue;
      LayerQuant q;
      q.weight_spec = QuantSpec::make(c.weight_bits, TensorKind::weights);
      q.act_spec = QuantSpec::make(c.act_bits, TensorKind::activations);
      q.weight_scale = find(scale_name(c.layer_id, "w"));
      q.act_scale = find(scale_name(c.layer_id, "a"));
      plan.at(static_cast<std::size_t>(c.layer_id)) = q;
    }
  }
  return evaluate(net, data.val, plan);
}

namespace {

// Search, fine-tune and evaluate on top of existing indicator artifacts.
RunRecord finish_run(const RunConfig& cfg, const DatasetHandle& data,
                     const IndicatorStageResult& ind, const fs::path& dir, RunRecord rec,
                     bool with_baseline) {
  fs::create_directories(dir);
  const auto stats = read_stats_file(ind.stats);
  const Budget budget = resolve_budget(cfg, stats);

  auto t0 = Clock::now();
  const fs::path policy_path = dir / "policy.txt";
  const Policy policy = in_stage("search", [&] {
    return run_search({ind.indicators, ind.stats, cfg.search.alpha, budget, cfg.search.reversed},
                      policy_path);
  });
  rec.wall_seconds.emplace_back("search", seconds_since(t0));

  t0 = Clock::now();
  const auto ft = stage_finetune(cfg, data, ind.pretrained, policy, dir / "finetuned.bin");
  rec.wall_seconds.emplace_back("finetune", seconds_since(t0));
  if (with_baseline && cfg.baseline_uniform_bits > 0) {
    t0 = Clock::now();
    Network probe = build_model(cfg, data.meta);
    const auto base = stage_finetune(cfg, data, ind.pretrained,
                                     uniform_policy(probe, cfg.baseline_uniform_bits),
                                     dir / "uniform_finetuned.bin");
    rec.wall_seconds.emplace_back("uniform_finetune", seconds_since(t0));
    rec.metrics.emplace_back("uniform_top1", base.top1);
    add_artifact(rec, dir, "uniform_weights", base.weights);
  }
  rec.metrics.emplace_back("fp_top1", ind.fp_top1);
  rec.metrics.emplace_back("finetune_top1", ft.top1);
  rec.metrics.emplace_back("policy_objective", policy.objective);
  rec.metrics.emplace_back("policy_bitops", static_cast<double>(policy.total_bitops));
  rec.metrics.emplace_back("policy_size_bits", static_cast<double>(policy.total_size_bits));
  if (budget.bitops) rec.metrics.emplace_back("budget_bitops", static_cast<double>(*budget.bitops));
  if (budget.size_bits) {
    rec.metrics.emplace_back("budget_size_bits", static_cast<double>(*budget.size_bits));
  }

  write_text(dir / "config.txt", cfg.canonical());
  add_artifact(rec, dir, "config", dir / "config.txt");
  add_artifact(rec, dir, "pretrained", ind.pretrained);
  add_artifact(rec, dir, "indicators", ind.indicators);
  add_artifact(rec, dir, "layer_stats", ind.stats);
  add_artifact(rec, dir, "policy", policy_path);
  add_artifact(rec, dir, "finetuned", ft.weights);
  append_run_record(dir / kRunRecordFile, rec);
  return rec;
}

struct Prepared {
  DatasetHandle data;
  std::vector<LayerCostStats> stats;
};

Prepared prepare(const RunConfig& cfg) {
  cfg.validate();
  Prepared p{in_stage("data", [&] { return load_dataset(cfg); }), {}};
  p.stats = model_stats(build_model(cfg, p.data.meta));
  const Budget budget = resolve_budget(cfg, p.stats);
  in_stage("search", [&] { precheck_budget(p.stats, cfg.indicators.bits, budget); });
  return p;
}

}  // namespace

RunRecord run_pipeline(const RunConfig& cfg, const fs::path& out_dir, bool force) {
  const std::string digest = cfg.digest();
  if (!force) {
    if (auto r = find_record(out_dir, digest)) return *r;
  }
  const auto prep = prepare(cfg);
  RunRecord rec;
  rec.config_digest = digest;
  const auto ind = stage_train_indicators(cfg, prep.data, out_dir, rec);
  return finish_run(cfg, prep.data, ind, out_dir, std::move(rec), true);
}

AblationResult ablate_reverse(const RunConfig& cfg, const fs::path& out_dir, bool force) {
  RunConfig routine = cfg, reversed = cfg;
  routine.search.reversed = false;
  reversed.search.reversed = true;
  const fs::path r_dir = out_dir / "routine", v_dir = out_dir / "reversed";
  if (!force) {
    auto a = find_record(r_dir, routine.digest());
    auto b = find_record(v_dir, reversed.digest());
    if (a && b) return {*a, *b};
  }
  const auto prep = prepare(routine);
  RunRecord shared;
  const auto ind = stage_train_indicators(routine, prep.data, out_dir / "shared", shared);
  RunRecord r0 = shared, r1 = shared;
  r0.config_digest = routine.digest();
  r1.config_digest = reversed.digest();
  AblationResult res;
  res.routine = finish_run(routine, prep.data, ind, r_dir, std::move(r0), true);
  res.reversed = finish_run(reversed, prep.data, ind, v_dir, std::move(r1), false);
  return res;
}

std::vector<AblationResult> ablate_reverse_seeds(const RunConfig& cfg,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const fs::path& out_dir, bool force,
                                                 unsigned jobs) {
  std::vector<AblationResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < seeds.size(); k = next++) {
      try {
        RunConfig c = cfg;
        c.apply_seed(seeds[k]);
        results[k] = ablate_reverse(c, out_dir / ("seed-" + std::to_string(seeds[k])), force);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(seeds.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace mpq
