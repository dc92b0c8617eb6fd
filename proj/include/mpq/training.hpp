// SPDX-License-Identifier: Apache-2.0
//
// Full-precision training, evaluation and fixed-policy quantization-aware
// fine-tuning.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpq/allocator.hpp"
#include "mpq/dataset.hpp"
#include "mpq/model.hpp"

namespace mpq {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::uint64_t steps = 1000;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double scale_lr = 0.01;        // quantizer scales; no weight decay
  std::string schedule = "cosine";  // constant | cosine
  std::uint64_t seed = 0;

  void validate() const;
};

// Multiplier applied to the base learning rate at `step` of `total`.
double lr_factor(const std::string& schedule, std::uint64_t step, std::uint64_t total);

// Reshuffles the index pool every epoch; the last partial batch of an epoch
// is dropped when the pool is larger than one batch.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::vector<std::size_t> pool_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

std::vector<std::size_t> iota_indices(std::size_t n);

struct TrainResult {
  std::vector<double> loss_curve;
};

TrainResult train_full_precision(Network& net, const Split& train, const TrainOptions& options);

// Top-1 accuracy in [0,1].
double evaluate(const Network& net, const Split& split, const QuantPlan& plan = {},
                std::size_t batch_size = 250);

// Fresh per-layer quantizers at the policy's bits. Weight scales come from
// weight statistics, activation scales from the activations of `calib`
// flowing through the quantized network. A layer whose weight and activation
// bits are both >= 32 runs in full precision.
QuantPlan make_policy_plan(const Network& net, const Policy& policy, const Tensor& calib);

struct FinetuneResult {
  double val_top1 = 0.0;
  std::vector<double> loss_curve;
  QuantPlan plan;
};

// Trains weights and the policy's scales at fixed bits, then evaluates on
// the validation split.
FinetuneResult finetune_with_policy(Network& net, const Policy& policy,
                                    const DatasetHandle& data, const TrainOptions& options);

// Uniform (b, b) policy over the network's quantized layers.
Policy uniform_policy(const Network& net, int bits);

}  // namespace mpq
