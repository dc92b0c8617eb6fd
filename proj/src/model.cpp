// SPDX-License-Identifier: Apache-2.0
#include "mpq/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mpq/format.hpp"

namespace mpq {

Network::Network(std::string name, Shape input_shape, std::size_t classes)
    : name_(std::move(name)), input_shape_(std::move(input_shape)), classes_(classes) {}

Shape Network::current_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back().out_shape;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

void Network::add_linear(std::size_t out_features, double weight_std, std::mt19937_64& rng) {
  const Shape in = current_shape();
  if (in.size() != 1) {
    throw ShapeError("linear layer needs a flat input, got " + shape_str(in));
  }
  Layer l;
  l.type = LayerType::linear;
  l.layer_id = static_cast<int>(mac_layers_.size());
  l.quantized = true;
  l.weight = normal_tensor({in[0], out_features}, weight_std, rng);
  l.bias = Tensor::zeros({out_features}, true);
  l.out_shape = {out_features};
  mac_layers_.push_back(layers_.size());
  layers_.push_back(std::move(l));
}

void Network::add_conv2d(std::size_t out_channels, std::size_t kernel, Conv2dParams params,
                         double weight_std, std::mt19937_64& rng) {
  const Shape in = current_shape();
  if (in.size() != 3) throw ShapeError("conv2d layer needs a [C,H,W] input, got " + shape_str(in));
  if (in[1] + 2 * params.padding < kernel || in[2] + 2 * params.padding < kernel) {
    throw ShapeError("conv2d kernel larger than padded input " + shape_str(in));
  }
  Layer l;
  l.type = LayerType::conv2d;
  l.layer_id = static_cast<int>(mac_layers_.size());
  l.quantized = true;
  l.conv = params;
  l.weight = normal_tensor({out_channels, in[0], kernel, kernel}, weight_std, rng);
  l.bias = Tensor::zeros({out_channels}, true);
  l.out_shape = {out_channels, (in[1] + 2 * params.padding - kernel) / params.stride + 1,
                 (in[2] + 2 * params.padding - kernel) / params.stride + 1};
  mac_layers_.push_back(layers_.size());
  layers_.push_back(std::move(l));
}

void Network::add_relu() {
  Layer l;
  l.type = LayerType::relu;
  l.out_shape = current_shape();
  layers_.push_back(std::move(l));
}

void Network::add_flatten() {
  Layer l;
  l.type = LayerType::flatten;
  l.out_shape = {shape_numel(current_shape())};
  layers_.push_back(std::move(l));
}

Tensor Network::forward(Graph& graph, const Tensor& input, const QuantPlan& plan) const {
  Shape expected{input.rank() > 0 ? input.dim(0) : 0};
  expected.insert(expected.end(), input_shape_.begin(), input_shape_.end());
  if (input.shape() != expected) {
    throw ShapeError("network '" + name_ + "': input " + shape_str(input.shape()) +
                     " does not match [N]+" + shape_str(input_shape_));
  }
  Tensor x = input;
  for (const auto& layer : layers_) {
    switch (layer.type) {
      case LayerType::relu:
        x = graph.relu(x);
        break;
      case LayerType::flatten:
        x = graph.flatten(x);
        break;
      case LayerType::linear:
      case LayerType::conv2d: {
        Tensor w = layer.weight;
        const auto id = static_cast<std::size_t>(layer.layer_id);
        if (layer.quantized && id < plan.size() && plan[id]) {
          const LayerQuant& q = *plan[id];
          if (q.calibrate_activation) {
            Tensor s = q.act_scale;
            s.values()[0] = init_scale_statistics(x.values(), q.act_spec);
          }
          x = fake_quantize(graph, x, q.act_scale, q.act_spec, q.scale_step_grad);
          w = fake_quantize(graph, w, q.weight_scale, q.weight_spec, q.scale_step_grad);
        }
        x = layer.type == LayerType::linear ? graph.matmul(x, w) : graph.conv2d(x, w, layer.conv);
        x = graph.add_bias(x, layer.bias);
        break;
      }
    }
  }
  return x;
}

std::vector<Tensor> Network::layer_inputs(const Tensor& input) const {
  Graph graph(false);
  std::vector<Tensor> out(mac_layers_.size());
  Tensor x = input;
  for (const auto& layer : layers_) {
    switch (layer.type) {
      case LayerType::relu:
        x = graph.relu(x);
        break;
      case LayerType::flatten:
        x = graph.flatten(x);
        break;
      case LayerType::linear:
        out[static_cast<std::size_t>(layer.layer_id)] = x;
        x = graph.add_bias(graph.matmul(x, layer.weight), layer.bias);
        break;
      case LayerType::conv2d:
        out[static_cast<std::size_t>(layer.layer_id)] = x;
        x = graph.add_bias(graph.conv2d(x, layer.weight, layer.conv), layer.bias);
        break;
    }
  }
  return out;
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (auto idx : mac_layers_) {
    out.push_back(layers_[idx].weight);
    out.push_back(layers_[idx].bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Network::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto idx : mac_layers_) {
    const auto& l = layers_[idx];
    const std::string prefix = "layer" + std::to_string(l.layer_id);
    out.emplace_back(prefix + ".weight", l.weight);
    out.emplace_back(prefix + ".bias", l.bias);
  }
  return out;
}

std::vector<LayerDesc> Network::arch() const {
  std::vector<LayerDesc> out;
  Shape in = input_shape_;
  for (const auto& l : layers_) {
    LayerDesc d;
    d.layer_id = l.layer_id;
    d.quantized = l.quantized;
    switch (l.type) {
      case LayerType::relu:
        d.kind = "relu";
        d.quantized = false;
        break;
      case LayerType::flatten:
        d.kind = "flatten";
        d.quantized = false;
        break;
      case LayerType::linear:
        d.kind = "linear";
        d.in_features = l.weight.dim(0);
        d.out_features = l.weight.dim(1);
        break;
      case LayerType::conv2d:
        d.kind = "conv2d";
        d.out_channels = l.weight.dim(0);
        d.in_channels = l.weight.dim(1);
        d.kernel_h = l.weight.dim(2);
        d.kernel_w = l.weight.dim(3);
        d.out_h = l.out_shape[1];
        d.out_w = l.out_shape[2];
        break;
    }
    out.push_back(d);
    in = l.out_shape;
  }
  return out;
}

const Layer& Network::mac_layer(int layer_id) const {
  if (layer_id < 0 || static_cast<std::size_t>(layer_id) >= mac_layers_.size()) {
    throw std::out_of_range("no MAC layer with id " + std::to_string(layer_id));
  }
  return layers_[mac_layers_[static_cast<std::size_t>(layer_id)]];
}

std::vector<int> Network::quantized_layer_ids() const {
  std::vector<int> out;
  for (auto idx : mac_layers_)
    if (layers_[idx].quantized) out.push_back(layers_[idx].layer_id);
  return out;
}

void Network::set_quantized(int layer_id, bool on) {
  mac_layer(layer_id);
  layers_[mac_layers_[static_cast<std::size_t>(layer_id)]].quantized = on;
}

Network Network::clone() const {
  Network copy = *this;
  for (auto& l : copy.layers_) {
    if (l.weight.defined()) l.weight = l.weight.clone();
    if (l.bias.defined()) l.bias = l.bias.clone();
  }
  return copy;
}

Network make_model(const ModelOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  const std::size_t in_features = shape_numel(opt.input_shape);
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  if (opt.classes < 2) throw std::invalid_argument("make_model: need at least 2 classes");
  if (opt.name == "mlp") {
    Network net("mlp", opt.input_shape, opt.classes);
    net.add_flatten();
    net.add_linear(opt.hidden, he(in_features), rng);
    net.add_relu();
    net.add_linear(opt.classes, he(opt.hidden), rng);
    if (opt.exempt_first_last.value_or(false)) {
      net.set_quantized(0, false);
      net.set_quantized(1, false);
    }
    return net;
  }
  if (opt.name == "cnn") {
    if (opt.input_shape.size() != 3) {
      throw std::invalid_argument("make_model: cnn needs a [C,H,W] input shape");
    }
    const std::size_t c = opt.input_shape[0];
    Network net("cnn", opt.input_shape, opt.classes);
    net.add_conv2d(8, 3, {1, 1}, he(c * 9), rng);
    net.add_relu();
    net.add_conv2d(8, 3, {2, 1}, he(8 * 9), rng);
    net.add_relu();
    net.add_conv2d(16, 3, {1, 1}, he(8 * 9), rng);
    net.add_relu();
    net.add_conv2d(16, 3, {2, 1}, he(16 * 9), rng);
    net.add_relu();
    net.add_flatten();
    const std::size_t flat = net.arch().back().kind == "flatten"
                                 ? shape_numel(net.mac_layer(3).out_shape)
                                 : 0;
    net.add_linear(opt.classes, he(flat), rng);
    if (opt.exempt_first_last.value_or(true)) {
      net.set_quantized(0, false);
      net.set_quantized(4, false);
    }
    return net;
  }
  if (opt.name == "contrast") {
    if (in_features != opt.classes) {
      throw std::invalid_argument(
          "make_model: contrast needs input features == classes so both layers share I/O sizes");
    }
    Network net("contrast", opt.input_shape, opt.classes);
    net.add_flatten();
    net.add_linear(in_features, opt.wide_std, rng);
    net.add_relu();
    net.add_linear(in_features, opt.narrow_std, rng);
    if (opt.exempt_first_last.value_or(false)) {
      net.set_quantized(0, false);
      net.set_quantized(1, false);
    }
    return net;
  }
  throw std::invalid_argument("make_model: unknown model '" + opt.name + "'");
}

void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "mpq-tensors v1\n" << tensors.size() << "\n";
  for (const auto& [name, t] : tensors) {
    out << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "mpq-tensors v1") {
    throw std::runtime_error(path.string() + ": not a tensor dump");
  }
  std::getline(in, line);
  const std::size_t count = parse_uint(line);
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated");
    auto tok = split_ws(line);
    if (tok.size() < 2) throw std::runtime_error(path.string() + ": bad tensor header");
    const std::size_t rank = parse_uint(tok[1]);
    if (tok.size() != 2 + rank) throw std::runtime_error(path.string() + ": bad tensor header");
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(parse_uint(tok[2 + i]));
    std::vector<double> values(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw std::runtime_error(path.string() + ": truncated payload");
    }
    out.emplace_back(std::string(tok[0]), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void load_parameters(Network& net, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  for (auto& [name, param] : net.named_parameters()) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const auto& p) { return p.first == name; });
    if (it == tensors.end()) throw std::runtime_error("weight dump lacks '" + name + "'");
    if (it->second.shape() != param.shape()) {
      throw ShapeError("weight '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(param.shape()));
    }
    Tensor dst = param;
    std::copy(it->second.values().begin(), it->second.values().end(), dst.values().begin());
  }
}

}  // namespace mpq
