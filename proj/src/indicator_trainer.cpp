// SPDX-License-Identifier: Apache-2.0
#include "mpq/indicator_trainer.hpp"

#include <algorithm>
#include <cmath>

#include "mpq/training.hpp"

namespace mpq {

ScaleBank::ScaleBank(std::vector<int> bits, std::vector<int> layer_ids)
    : bits_(std::move(bits)), layer_ids_(std::move(layer_ids)) {
  if (bits_.empty()) throw std::invalid_argument("ScaleBank: empty bit-option list");
  if (layer_ids_.empty()) throw std::invalid_argument("ScaleBank: no quantized layers");
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] < 2 || (i > 0 && bits_[i] <= bits_[i - 1])) {
      throw std::invalid_argument("ScaleBank: bit options must be strictly increasing and >= 2");
    }
  }
  for (std::size_t k = 0; k < layers() * options(); ++k) {
    weight_.push_back(Tensor::scalar(1.0, true));
    act_.push_back(Tensor::scalar(1.0, true));
  }
}

std::vector<Tensor> ScaleBank::tensors() const {
  std::vector<Tensor> out(weight_);
  out.insert(out.end(), act_.begin(), act_.end());
  return out;
}

IndicatorReport ScaleBank::snapshot() const {
  IndicatorReport r;
  r.bits = bits_;
  r.layer_ids = layer_ids_;
  r.weight_scales.assign(layers(), std::vector<double>(options()));
  r.act_scales.assign(layers(), std::vector<double>(options()));
  for (std::size_t l = 0; l < layers(); ++l) {
    for (std::size_t i = 0; i < options(); ++i) {
      r.weight_scales[l][i] = weight(l, i).item();
      r.act_scales[l][i] = act(l, i).item();
    }
  }
  return r;
}

BitAssignment BitAssignment::uniform(std::size_t layers, std::size_t index) {
  return {std::vector<std::size_t>(layers, index), std::vector<std::size_t>(layers, index)};
}

void IndicatorConfig::validate() const {
  if (bits.empty()) throw std::invalid_argument("indicator training: empty bit-option list");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] < 2 || bits[i] > 16 || (i > 0 && bits[i] <= bits[i - 1])) {
      throw std::invalid_argument("bit options must be strictly increasing, each in [2,16]");
    }
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0) || !(scale_lr > 0)) throw std::invalid_argument("learning rates must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(data_fraction > 0 && data_fraction <= 1)) {
    throw std::invalid_argument("data_fraction must be in (0,1]");
  }
  if (init_scheme != "statistics" && init_scheme != "uniform") {
    throw std::invalid_argument("unknown init scheme '" + init_scheme + "'");
  }
  if (schedule != "constant" && schedule != "cosine") {
    throw std::invalid_argument("unknown lr schedule '" + schedule + "'");
  }
}

std::uint64_t IndicatorSession::random_stream_seed(std::uint64_t seed) {
  // splitmix64 finalizer: decorrelates the assignment stream from the
  // data-shuffle stream seeded with the raw seed.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

BitAssignment IndicatorSession::draw_random(std::mt19937_64& rng, std::size_t layers,
                                            std::size_t n) {
  BitAssignment a;
  for (std::size_t l = 0; l < layers; ++l) {
    a.weight_index.push_back(static_cast<std::size_t>(rng() % n));
    a.act_index.push_back(static_cast<std::size_t>(rng() % n));
  }
  return a;
}

IndicatorSession::IndicatorSession(Network& net, const Split& train,
                                   const IndicatorConfig& config)
    : net_(net),
      train_(train),
      config_(config),
      bank_((config.validate(), config.bits), net.quantized_layer_ids()),
      assign_rng_(random_stream_seed(config.seed)) {
  if (train.size() == 0) throw std::invalid_argument("indicator training: empty training split");
  Shape expected = net.input_shape();
  if (train.item_shape != expected) {
    throw ShapeError("indicator training: data items " + shape_str(train.item_shape) +
                     " do not match model input " + shape_str(expected));
  }
  // Fixed subset: first ceil(fraction * N) items of a seeded permutation.
  BatchSampler perm(iota_indices(train.size()), train.size(), config.seed);
  subset_ = perm.next();
  const auto keep = static_cast<std::size_t>(
      std::ceil(config.data_fraction * static_cast<double>(train.size())));
  subset_.resize(std::max<std::size_t>(1, std::min(keep, subset_.size())));
  std::sort(subset_.begin(), subset_.end());

  sgd_.add_group(net.parameters(),
                 {config.lr, config.momentum, config.weight_decay, std::nullopt});
  sgd_.add_group(bank_.tensors(), {config.scale_lr, config.momentum, 0.0, kMinScale});
  const std::size_t slots = bank_.layers() * bank_.options();
  touches_.uniform_weight.assign(slots, 0);
  touches_.uniform_act.assign(slots, 0);
  touches_.random_weight.assign(slots, 0);
  touches_.random_act.assign(slots, 0);
}

std::vector<std::size_t> IndicatorSession::first_batch() const {
  BatchSampler s(subset_, config_.batch_size, config_.seed);
  return s.next();
}

void IndicatorSession::initialize() {
  const std::size_t n = bank_.options();
  for (std::size_t l = 0; l < bank_.layers(); ++l) {
    const auto& w = net_.mac_layer(bank_.layer_ids()[l]).weight;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ws = QuantSpec::make(bank_.bits()[i], TensorKind::weights);
      const auto as = QuantSpec::make(bank_.bits()[i], TensorKind::activations);
      if (config_.init_scheme == "uniform") {
        bank_.weight(l, i).values()[0] = init_scale_uniform(ws);
        bank_.act(l, i).values()[0] = init_scale_uniform(as);
      } else {
        bank_.weight(l, i).values()[0] = init_scale_statistics(w.values(), ws);
      }
    }
  }
  if (config_.init_scheme == "uniform") return;
  const auto input = train_.batch(first_batch());
  for (std::size_t i = 0; i < n; ++i) {
    Graph graph(false);
    auto plan = make_plan(nullptr, BitAssignment::uniform(bank_.layers(), i), true);
    for (auto& q : plan)
      if (q) q->calibrate_activation = true;
    net_.forward(graph, input, plan);
  }
}

QuantPlan IndicatorSession::make_plan(Graph* graph, const BitAssignment& a, bool uniform_pass) {
  const std::size_t n = bank_.options();
  QuantPlan plan(net_.mac_layer_count());
  // Routes gradient into the bank entry through a counting identity node.
  auto tap = [&](Tensor& entry, std::uint64_t& counter) -> Tensor {
    if (graph == nullptr) return entry;
    Tensor out = Tensor::scalar(entry.item());
    return graph->record(out, {entry}, "bank_tap",
                         [entry, &counter](std::span<const double> g) mutable {
                           entry.ensure_grad()[0] += g[0];
                           ++counter;
                         });
  };
  for (std::size_t l = 0; l < bank_.layers(); ++l) {
    const std::size_t wi = a.weight_index.at(l), ai = a.act_index.at(l);
    if (wi >= n || ai >= n) throw std::out_of_range("bit assignment index out of range");
    auto& wc = uniform_pass ? touches_.uniform_weight : touches_.random_weight;
    auto& ac = uniform_pass ? touches_.uniform_act : touches_.random_act;
    LayerQuant q;
    q.weight_spec = QuantSpec::make(bank_.bits()[wi], TensorKind::weights);
    q.act_spec = QuantSpec::make(bank_.bits()[ai], TensorKind::activations);
    q.weight_scale = tap(bank_.weight(l, wi), wc[l * n + wi]);
    q.act_scale = tap(bank_.act(l, ai), ac[l * n + ai]);
    q.scale_step_grad = config_.scale_step_grad;
    plan[static_cast<std::size_t>(bank_.layer_ids()[l])] = q;
  }
  return plan;
}

namespace {

std::vector<double> flatten_values(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

}  // namespace

StepMetrics IndicatorSession::atomic_update_step(const std::vector<std::size_t>& batch,
                                                 double lr_scale) {
  const std::size_t n = bank_.options();
  const auto input = train_.batch(batch);
  const auto labels = train_.batch_labels(batch);
  std::vector<Tensor> watched;
  std::vector<double> before;
  if (config_.trace) {
    watched = net_.parameters();
    auto b = bank_.tensors();
    watched.insert(watched.end(), b.begin(), b.end());
    before = flatten_values(watched);
  }
  StepMetrics m;
  double loss_sum = 0.0;
  for (std::size_t pass = 0; pass <= n; ++pass) {
    const bool uniform = pass < n;
    BitAssignment a = uniform ? BitAssignment::uniform(bank_.layers(), pass)
                              : draw_random(assign_rng_, bank_.layers(), n);
    if (config_.trace && flatten_values(watched) != before) {
      m.trace.parameters_frozen_within_step = false;
    }
    Graph graph;
    auto plan = make_plan(&graph, a, uniform);
    auto logits = net_.forward(graph, input, plan);
    ++m.trace.forward_passes;
    auto loss = graph.softmax_cross_entropy(logits, labels);
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("indicator training: non-finite loss at step " +
                            std::to_string(steps_done_) + ", pass " + std::to_string(pass));
    }
    loss_sum += loss.item();
    graph.backward(loss);
    ++m.trace.backward_passes;
    if (!uniform) m.trace.random_assignment = std::move(a);
  }
  sgd_.scale_grads(1.0 / static_cast<double>(n + 1));
  sgd_.step(lr_scale);
  m.mean_loss = loss_sum / static_cast<double>(n + 1);
  loss_curve_.push_back(m.mean_loss);
  ++steps_done_;
  return m;
}

IndicatorReport IndicatorSession::run() {
  initialize();
  BatchSampler sampler(subset_, config_.batch_size, config_.seed);
  for (std::uint64_t step = 0; step < config_.steps; ++step) {
    atomic_update_step(sampler.next(), lr_factor(config_.schedule, step, config_.steps));
  }
  IndicatorReport r = bank_.snapshot();
  r.seed = config_.seed;
  r.steps = steps_done_;
  r.init_scheme = config_.init_scheme;
  r.loss_curve = loss_curve_;
  return r;
}

IndicatorReport train_indicators(const Network& net, const Split& train,
                                 const IndicatorConfig& config) {
  Network work = net.clone();
  IndicatorSession session(work, train, config);
  return session.run();
}

}  // namespace mpq
