// SPDX-License-Identifier: Apache-2.0
//
// Small feed-forward networks with optional fake quantization on every
// multiply-accumulate layer (linear / conv2d). A quantized layer computes
//
//   y = op(Q_a(x; s_a), Q_w(W; s_w)) + bias
//
// where the incoming activation x is non-negative (image pixels or a relu
// output), so activations use the unsigned grid.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mpq/cost_model.hpp"
#include "mpq/quantizer.hpp"
#include "mpq/tensor.hpp"

namespace mpq {

struct LayerQuant {
  Tensor weight_scale;
  QuantSpec weight_spec;
  Tensor act_scale;
  QuantSpec act_spec = QuantSpec{8, TensorKind::activations};
  // Overwrite act_scale from statistics of the incoming activation first.
  bool calibrate_activation = false;
  bool scale_step_grad = true;
};

// Indexed by MAC-layer id; an empty entry runs that layer in full precision.
using QuantPlan = std::vector<std::optional<LayerQuant>>;

enum class LayerType { linear, conv2d, relu, flatten };

struct Layer {
  LayerType type = LayerType::relu;
  int layer_id = -1;
  bool quantized = false;
  Tensor weight;  // linear: [in, out]; conv2d: [O, C, kh, kw]
  Tensor bias;
  Conv2dParams conv;
  Shape out_shape;  // per-sample output shape
};

class Network {
 public:
  Network(std::string name, Shape input_shape, std::size_t classes);

  void add_linear(std::size_t out_features, double weight_std, std::mt19937_64& rng);
  void add_conv2d(std::size_t out_channels, std::size_t kernel, Conv2dParams params,
                  double weight_std, std::mt19937_64& rng);
  void add_relu();
  void add_flatten();

  // input: [N, input_shape...] -> logits [N, classes]
  Tensor forward(Graph& graph, const Tensor& input, const QuantPlan& plan = {}) const;

  // Activation entering each MAC layer, full precision. Indexed by layer id.
  std::vector<Tensor> layer_inputs(const Tensor& input) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<LayerDesc> arch() const;

  std::size_t mac_layer_count() const { return mac_layers_.size(); }
  const Layer& mac_layer(int layer_id) const;
  std::vector<int> quantized_layer_ids() const;
  void set_quantized(int layer_id, bool on);

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }

  // Deep copy: parameters do not alias the original.
  Network clone() const;

 private:
  Shape current_shape() const;

  std::string name_;
  Shape input_shape_;
  std::size_t classes_;
  std::vector<Layer> layers_;
  std::vector<std::size_t> mac_layers_;  // indices into layers_
};

struct ModelOptions {
  std::string name = "mlp";  // mlp | cnn | contrast
  Shape input_shape = {1, 8, 8};
  std::size_t classes = 10;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
  // Keep the first and last MAC layer in full precision. Defaults: off for
  // mlp and contrast, on for cnn.
  std::optional<bool> exempt_first_last;
  // contrast only: weight std of the wide (first) and narrow (second) layer.
  double wide_std = 1.0;
  double narrow_std = 0.1;
};

// Throws std::invalid_argument for an unknown model name or inconsistent shapes.
Network make_model(const ModelOptions& options);

// Raw weight dump: text header per tensor (name, rank, extents) followed by
// the float64 values in host byte order.
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path);

// Copies values for every parameter of `net` from the dump; throws when a
// name is missing or shapes differ.
void load_parameters(Network& net, const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace mpq
