// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "mpq/tensor.hpp"

namespace mpq {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // Values are clamped to at least this after every step (scale factors).
  std::optional<double> clamp_min;
};

class MissingGradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Classic momentum SGD:  v <- mu*v + (g + wd*w);  w <- w - lr*v.
// Each parameter group carries its own options and momentum buffers.
class Sgd {
 public:
  Sgd() = default;

  void add_group(std::vector<Tensor> params, SgdOptions options);

  // Applies one update with every group's lr multiplied by lr_scale, then
  // zeroes the gradients.
  void step(double lr_scale = 1.0);

  // Multiplies every parameter gradient by factor.
  void scale_grads(double factor);
  void zero_grad();

  std::size_t group_count() const { return groups_.size(); }
  const std::vector<double>& momentum_buffer(std::size_t group, std::size_t index) const {
    return groups_.at(group).buffers.at(index);
  }

 private:
  struct Group {
    std::vector<Tensor> params;
    std::vector<std::vector<double>> buffers;
    SgdOptions options;
  };
  std::vector<Group> groups_;
};

}  // namespace mpq
