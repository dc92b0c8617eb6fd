// SPDX-License-Identifier: Apache-2.0
//
// Stage orchestration: pretrain -> indicators -> search -> finetune -> eval.
// Every stage writes plain-text (or raw weight dump) artifacts into the run
// directory and a run record ties them together by SHA-256.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpq/config.hpp"
#include "mpq/search.hpp"

namespace mpq {

struct RunRecord {
  struct Artifact {
    std::string name;
    std::filesystem::path path;  // relative to the record file's directory
    std::string sha256;
  };
  std::string config_digest;
  std::vector<Artifact> artifacts;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, double>> wall_seconds;
  // Set when the run was skipped because a matching record already existed.
  bool reused = false;

  std::optional<double> metric(const std::string& name) const;
  const Artifact* artifact(const std::string& name) const;
};

inline constexpr const char* kRunRecordFile = "run_record.txt";

// Appends one record block; never rewrites earlier blocks.
void append_run_record(const std::filesystem::path& file, const RunRecord& record);
std::vector<RunRecord> read_run_records(const std::filesystem::path& file);
// Every artifact exists (relative to `base`) and matches its digest.
bool record_intact(const RunRecord& record, const std::filesystem::path& base);

DatasetHandle load_dataset(const RunConfig& cfg);
Network build_model(const RunConfig& cfg, const DatasetMeta& meta);
std::vector<LayerCostStats> model_stats(const Network& net);
Budget resolve_budget(const RunConfig& cfg, std::span<const LayerCostStats> stats);

struct IndicatorStageResult {
  std::filesystem::path pretrained, indicators, stats;
  double fp_top1 = 0.0;
};

// Pretrains in full precision, then trains the indicator bank. Writes
// pretrained.bin, indicators.txt and layer_stats.txt into dir.
IndicatorStageResult stage_train_indicators(const RunConfig& cfg, const DatasetHandle& data,
                                            const std::filesystem::path& dir, RunRecord& record);

struct FinetuneStageResult {
  double top1 = 0.0;
  std::filesystem::path weights;
};

// Fine-tunes the pretrained weights under the policy; writes the weights and
// learned scales to `weights_out`.
FinetuneStageResult stage_finetune(const RunConfig& cfg, const DatasetHandle& data,
                                   const std::filesystem::path& pretrained, const Policy& policy,
                                   const std::filesystem::path& weights_out);

// Validation top-1 of a weight dump; quantized per `policy` when given,
// using the scales stored in the dump.
double stage_eval(const RunConfig& cfg, const DatasetHandle& data,
                  const std::filesystem::path& weights, const std::optional<Policy>& policy);

// Full run into out_dir. A no-op returning the stored record when a record
// with the same config digest exists and is intact, unless force is set.
RunRecord run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir, bool force);

struct AblationResult {
  RunRecord routine;
  RunRecord reversed;
};

// Routine and reversed runs that share one indicator report:
// out_dir/shared, out_dir/routine, out_dir/reversed.
AblationResult ablate_reverse(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              bool force);

// ablate_reverse per seed under out_dir/seed-<s>, up to `jobs` seeds at a
// time; results in seed order.
std::vector<AblationResult> ablate_reverse_seeds(const RunConfig& cfg,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const std::filesystem::path& out_dir,
                                                 bool force, unsigned jobs);

}  // namespace mpq
