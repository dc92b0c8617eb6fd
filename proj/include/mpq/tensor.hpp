// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors and a reverse-mode tape.
//
// A Tensor is a shared handle: copying it aliases the same storage, so a
// parameter held by a model and recorded on a Graph is one object. Gradients
// accumulate into the grad slot until zero_grad() is called.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mpq {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad();
  // Allocates a zero grad slot if none exists.
  std::span<double> ensure_grad() const;
  void zero_grad();
  void clear_grad();

  // Deep copy of the values; the copy has no grad.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Graph;
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Ordered record of differentiable operations. Every op appends a node whose
// inputs were produced earlier, so reverse iteration is a valid topological
// order. backward() consumes the record.
class Graph {
 public:
  // Receives the gradient of the loss w.r.t. the node's output.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Graph() = default;
  explicit Graph(bool recording) : recording_(recording) {}

  // [m,k] x [k,n] -> [m,n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // x [N,C,H,W], w [O,C,kh,kw] -> [N,O,OH,OW]; im2col + gemm.
  Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dParams params = {});
  // Adds bias [C] along axis 1 of x [N,C,...].
  Tensor add_bias(const Tensor& x, const Tensor& bias);
  Tensor relu(const Tensor& x);
  // [N,...] -> [N, prod(...)]
  Tensor flatten(const Tensor& x);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor sum(const Tensor& x);
  // Mean softmax cross-entropy over the batch; logits [N,K].
  Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

  // Appends a custom node. Skipped (and `out` returned untouched) when no
  // input requires grad or the graph is not recording.
  Tensor record(Tensor out, std::vector<Tensor> inputs, std::string_view name,
                BackwardFn backward);

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string_view name;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  bool recording_ = true;
  std::vector<Node> nodes_;
};

}  // namespace mpq
