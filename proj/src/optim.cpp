// SPDX-License-Identifier: Apache-2.0
#include "mpq/optim.hpp"

#include <algorithm>

namespace mpq {

void Sgd::add_group(std::vector<Tensor> params, SgdOptions options) {
  if (!(options.lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
  if (options.momentum < 0.0 || options.momentum >= 1.0) {
    throw std::invalid_argument("sgd: momentum must lie in [0,1)");
  }
  if (options.weight_decay < 0.0) throw std::invalid_argument("sgd: negative weight decay");
  Group g;
  g.options = options;
  for (auto& p : params) g.buffers.emplace_back(p.numel(), 0.0);
  g.params = std::move(params);
  groups_.push_back(std::move(g));
}

void Sgd::step(double lr_scale) {
  for (auto& g : groups_) {
    for (const auto& p : g.params) {
      if (!p.has_grad()) {
        throw MissingGradientError("sgd: parameter of shape " + shape_str(p.shape()) +
                                   " has no gradient");
      }
    }
  }
  for (auto& g : groups_) {
    const double lr = g.options.lr * lr_scale;
    const double mu = g.options.momentum;
    const double wd = g.options.weight_decay;
    for (std::size_t k = 0; k < g.params.size(); ++k) {
      auto w = g.params[k].values();
      auto grad = g.params[k].grad();
      auto& v = g.buffers[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + (grad[i] + wd * w[i]);
        w[i] -= lr * v[i];
      }
      if (g.options.clamp_min) {
        for (double& x : w) x = std::max(x, *g.options.clamp_min);
      }
      g.params[k].zero_grad();
    }
  }
}

void Sgd::scale_grads(double factor) {
  for (auto& g : groups_)
    for (auto& p : g.params)
      if (p.has_grad())
        for (double& x : p.grad()) x *= factor;
}

void Sgd::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

}  // namespace mpq
