// SPDX-License-Identifier: Apache-2.0
#include "mpq/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mpq/format.hpp"
#include "mpq/optim.hpp"

namespace mpq {

void TrainOptions::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0) || !(scale_lr > 0)) throw std::invalid_argument("learning rates must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (schedule != "constant" && schedule != "cosine") {
    throw std::invalid_argument("unknown lr schedule '" + schedule + "'");
  }
}

double lr_factor(const std::string& schedule, std::uint64_t step, std::uint64_t total) {
  if (schedule == "constant" || total == 0) return 1.0;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

BatchSampler::BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size,
                           std::uint64_t seed)
    : pool_(std::move(pool)), batch_size_(std::min(batch_size, pool_.size())), rng_(seed) {
  if (pool_.empty()) throw std::invalid_argument("BatchSampler: empty index pool");
  if (batch_size == 0) throw std::invalid_argument("BatchSampler: batch size must be positive");
  reshuffle();
}

void BatchSampler::reshuffle() {
  // Fisher-Yates with our own draws: std::shuffle's algorithm is unspecified.
  for (std::size_t i = pool_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng_() % i);
    std::swap(pool_[i - 1], pool_[j]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > pool_.size()) reshuffle();
  std::vector<std::size_t> out(pool_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               pool_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return out;
}

namespace {

void check_finite(double loss, const char* stage, std::uint64_t step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(stage) + ": non-finite loss at step " +
                          std::to_string(step));
  }
}

std::vector<Tensor> plan_scales(const QuantPlan& plan) {
  std::vector<Tensor> out;
  for (const auto& q : plan) {
    if (!q) continue;
    out.push_back(q->weight_scale);
    out.push_back(q->act_scale);
  }
  return out;
}

TrainResult run_training(Network& net, const Split& train, const TrainOptions& opt,
                         const QuantPlan& plan, const char* stage) {
  opt.validate();
  Sgd sgd;
  sgd.add_group(net.parameters(), {opt.lr, opt.momentum, opt.weight_decay, std::nullopt});
  auto scales = plan_scales(plan);
  if (!scales.empty()) sgd.add_group(scales, {opt.scale_lr, opt.momentum, 0.0, kMinScale});
  BatchSampler sampler(iota_indices(train.size()), opt.batch_size, opt.seed);
  TrainResult result;
  for (std::uint64_t step = 0; step < opt.steps; ++step) {
    auto idx = sampler.next();
    Graph graph;
    auto logits = net.forward(graph, train.batch(idx), plan);
    auto labels = train.batch_labels(idx);
    auto loss = graph.softmax_cross_entropy(logits, labels);
    check_finite(loss.item(), stage, step);
    result.loss_curve.push_back(loss.item());
    graph.backward(loss);
    sgd.step(lr_factor(opt.schedule, step, opt.steps));
  }
  return result;
}

}  // namespace

TrainResult train_full_precision(Network& net, const Split& train, const TrainOptions& options) {
  return run_training(net, train, options, {}, "pretrain");
}

double evaluate(const Network& net, const Split& split, const QuantPlan& plan,
                std::size_t batch_size) {
  if (split.size() == 0) throw std::invalid_argument("evaluate: empty split");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph graph(false);
    auto logits = net.forward(graph, split.batch(idx), plan);
    const std::size_t k = logits.dim(1);
    auto v = logits.values();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto row = v.subspan(b * k, k);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == split.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

QuantPlan make_policy_plan(const Network& net, const Policy& policy, const Tensor& calib) {
  const auto ids = net.quantized_layer_ids();
  if (policy.choices.size() != ids.size()) {
    throw std::invalid_argument("policy covers " + std::to_string(policy.choices.size()) +
                                " layers, model has " + std::to_string(ids.size()) +
                                " quantized layers");
  }
  QuantPlan plan(net.mac_layer_count());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& c = policy.choices[k];
    if (c.layer_id != ids[k]) {
      throw std::invalid_argument("policy layer " + std::to_string(c.layer_id) +
                                  " does not match model layer " + std::to_string(ids[k]));
    }
    const bool w_full = c.weight_bits >= 32, a_full = c.act_bits >= 32;
    if (w_full && a_full) continue;
    if (w_full != a_full) {
      throw std::invalid_argument("layer " + std::to_string(c.layer_id) +
                                  ": full precision must cover both weights and activations");
    }
    LayerQuant q;
    q.weight_spec = QuantSpec::make(c.weight_bits, TensorKind::weights);
    q.act_spec = QuantSpec::make(c.act_bits, TensorKind::activations);
    const auto& w = net.mac_layer(c.layer_id).weight;
    q.weight_scale = Tensor::scalar(init_scale_statistics(w.values(), q.weight_spec), true);
    q.act_scale = Tensor::scalar(1.0, true);
    q.calibrate_activation = true;
    plan[static_cast<std::size_t>(c.layer_id)] = q;
  }
  Graph graph(false);
  net.forward(graph, calib, plan);
  for (auto& q : plan)
    if (q) q->calibrate_activation = false;
  return plan;
}

FinetuneResult finetune_with_policy(Network& net, const Policy& policy,
                                    const DatasetHandle& data, const TrainOptions& options) {
  options.validate();
  BatchSampler first(iota_indices(data.train.size()), options.batch_size, options.seed);
  FinetuneResult result;
  result.plan = make_policy_plan(net, policy, data.train.batch(first.next()));
  result.loss_curve = run_training(net, data.train, options, result.plan, "finetune").loss_curve;
  result.val_top1 = evaluate(net, data.val, result.plan);
  return result;
}

Policy uniform_policy(const Network& net, int bits) {
  Policy p;
  for (int id : net.quantized_layer_ids()) p.choices.push_back({id, bits, bits, -1, -1});
  return p;
}

}  // namespace mpq
