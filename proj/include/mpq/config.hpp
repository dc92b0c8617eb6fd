// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. File format: `[section]` headers and `key = value`
// lines; `#` starts a comment; values may be double-quoted. Unknown sections
// or keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpq/cost_model.hpp"
#include "mpq/dataset.hpp"
#include "mpq/indicator_trainer.hpp"
#include "mpq/training.hpp"

namespace mpq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  SynthSpec synth;
  std::filesystem::path train_images, train_labels, val_images, val_labels;
};

struct SearchConfig {
  double alpha = 1.0;
  std::optional<std::uint64_t> budget_bitops;
  // Uniform-level convenience: budget = level^2 * total MACs of the quantized layers.
  std::optional<int> budget_bitops_level;
  std::optional<std::uint64_t> budget_size_bits;
  bool reversed = false;
};

struct RunConfig {
  std::string model = "mlp";
  std::uint64_t seed = 0;
  std::optional<bool> exempt_first_last;
  std::size_t hidden = 64;
  std::filesystem::path out_dir;

  DataConfig data;
  TrainOptions pretrain{.steps = 1000, .lr = 0.05};
  IndicatorConfig indicators;
  SearchConfig search;
  TrainOptions finetune{.steps = 500, .lr = 0.01};
  // Also fine-tune a uniform policy at these bits for comparison (0 = off).
  int baseline_uniform_bits = 0;

  // Throws ConfigError.
  void validate() const;
  // Seeds of every stage follow the run seed.
  void apply_seed(std::uint64_t seed);
  // Normalized text listing every effective value; the basis of digest().
  std::string canonical() const;
  std::string digest() const;
};

RunConfig parse_config(std::istream& is, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// "2,3,4,8" -> {2,3,4,8}; throws ConfigError.
std::vector<int> parse_bit_list(const std::string& text);

}  // namespace mpq
