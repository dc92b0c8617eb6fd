// SPDX-License-Identifier: Apache-2.0
#include "mpq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mpq {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->values.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().values.size(); }

std::span<double> Tensor::values() { return impl().values; }
std::span<const double> Tensor::values() const { return impl().values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().values[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool on) { impl().requires_grad = on; }

bool Tensor::has_grad() const { return impl().has_grad; }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl().grad;
}

std::span<double> Tensor::grad() {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl().grad;
}

std::span<double> Tensor::ensure_grad() const {
  auto& d = impl();
  if (!d.has_grad) {
    d.grad.assign(d.values.size(), 0.0);
    d.has_grad = true;
  }
  return d.grad;
}

void Tensor::zero_grad() {
  auto& d = impl();
  if (d.has_grad) std::fill(d.grad.begin(), d.grad.end(), 0.0);
}

void Tensor::clear_grad() {
  auto& d = impl();
  d.grad.clear();
  d.has_grad = false;
}

Tensor Tensor::clone() const {
  return from(shape(), std::vector<double>(values().begin(), values().end()), requires_grad());
}

// ---------------------------------------------------------------------------
// Dense kernels. All accumulate into C.

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::size_t p_count = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p_count;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[y * g.ow + x] = inside ? img[(ch * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t p_count = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p_count;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(ch * g.h + iy) * g.w + ix] += row[y * g.ow + x];
          }
        }
      }
    }
  }
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::record(Tensor out, std::vector<Tensor> inputs, std::string_view name,
                     BackwardFn backward) {
  if (!recording_ || !any_requires_grad(inputs)) return out;
  out.set_requires_grad(true);
  nodes_.push_back(Node{name, std::move(inputs), out, std::move(backward)});
  return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " (inner dimensions must agree)");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(m, n, k, a.values().data(), b.values().data(), out.values().data());
  return record(out, {a, b}, "matmul", [a, b, m, n, k](std::span<const double> dc) mutable {
    if (a.requires_grad()) gemm_nt(m, k, n, dc.data(), b.values().data(), a.ensure_grad().data());
    if (b.requires_grad()) gemm_tn(k, n, m, a.values().data(), dc.data(), b.ensure_grad().data());
  });
}

Tensor Graph::conv2d(const Tensor& x, const Tensor& w, Conv2dParams params) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " != kernel channels " + std::to_string(w.dim(1)));
  }
  if (params.stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = params.stride;
  g.pad = params.padding;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t rows = g.col_rows(), cols_n = g.col_cols();
  const std::size_t img_size = g.c * g.h * g.w;
  auto cols = std::make_shared<std::vector<double>>(g.n * rows * cols_n);
  Tensor out = Tensor::zeros({g.n, g.o, g.oh, g.ow});
  for (std::size_t s = 0; s < g.n; ++s) {
    double* col_s = cols->data() + s * rows * cols_n;
    im2col(g, x.values().data() + s * img_size, col_s);
    gemm_nn(g.o, cols_n, rows, w.values().data(), col_s,
            out.values().data() + s * g.o * cols_n);
  }
  return record(out, {x, w}, "conv2d",
                [x, w, g, cols, img_size](std::span<const double> dout) mutable {
                  const std::size_t rows = g.col_rows(), cols_n = g.col_cols();
                  std::vector<double> dcols;
                  if (x.requires_grad()) dcols.resize(rows * cols_n);
                  for (std::size_t s = 0; s < g.n; ++s) {
                    const double* dout_s = dout.data() + s * g.o * cols_n;
                    const double* col_s = cols->data() + s * rows * cols_n;
                    if (w.requires_grad()) {
                      gemm_nt(g.o, rows, cols_n, dout_s, col_s, w.ensure_grad().data());
                    }
                    if (x.requires_grad()) {
                      std::fill(dcols.begin(), dcols.end(), 0.0);
                      gemm_tn(rows, cols_n, g.o, w.values().data(), dout_s, dcols.data());
                      col2im(g, dcols.data(), x.ensure_grad().data() + s * img_size);
                    }
                  }
                });
}

Tensor Graph::add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match axis 1 of " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  Tensor out = x.clone();
  out.set_requires_grad(false);
  auto ov = out.values();
  auto bv = bias.values();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) ov[(s * c + ch) * inner + i] += bv[ch];
  return record(out, {x, bias}, "add_bias",
                [x, bias, n, c, inner](std::span<const double> dout) mutable {
                  if (x.requires_grad()) {
                    auto dx = x.ensure_grad();
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
                  }
                  if (bias.requires_grad()) {
                    auto db = bias.ensure_grad();
                    for (std::size_t s = 0; s < n; ++s)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t i = 0; i < inner; ++i)
                          db[ch] += dout[(s * c + ch) * inner + i];
                  }
                });
}

Tensor Graph::relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return record(out, {x}, "relu", [x](std::span<const double> dout) mutable {
    auto xv = x.values();
    auto dx = x.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dout[i];
  });
}

Tensor Graph::flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = x.dim(0);
  Tensor out = Tensor::from({n, x.numel() / n},
                            std::vector<double>(x.values().begin(), x.values().end()));
  return record(out, {x}, "flatten", [x](std::span<const double> dout) mutable {
    auto dx = x.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return record(out, {a, b}, "mul", [a, b](std::span<const double> dout) mutable {
    auto av = a.values(), bv = b.values();
    if (a.requires_grad()) {
      auto da = a.ensure_grad();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dout[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto db = b.ensure_grad();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dout[i] * av[i];
    }
  });
}

Tensor Graph::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return record(Tensor::scalar(acc), {x}, "sum", [x](std::span<const double> dout) mutable {
    auto dx = x.ensure_grad();
    for (double& d : dx) d += dout[0];
  });
}

Tensor Graph::softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                     " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto probs = std::make_shared<std::vector<double>>(n * k);
  std::vector<int> lab(labels.begin(), labels.end());
  auto lv = logits.values();
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    if (lab[s] < 0 || static_cast<std::size_t>(lab[s]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(lab[s]) +
                              " outside [0," + std::to_string(k) + ")");
    }
    const double* row = lv.data() + s * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[s * k + j] = std::exp(row[j] - mx);
      z += (*probs)[s * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)[s * k + j] /= z;
    loss += -(row[lab[s]] - mx - std::log(z));
  }
  loss /= static_cast<double>(n);
  return record(Tensor::scalar(loss), {logits}, "softmax_cross_entropy",
                [logits, probs, lab, n, k](std::span<const double> dout) mutable {
                  auto dl = logits.ensure_grad();
                  const double scale = dout[0] / static_cast<double>(n);
                  for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t j = 0; j < k; ++j) {
                      const double target = static_cast<std::size_t>(lab[s]) == j ? 1.0 : 0.0;
                      dl[s * k + j] += scale * ((*probs)[s * k + j] - target);
                    }
                  }
                });
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (nodes_.empty()) throw std::logic_error("backward: graph is empty");
  // Run the pass into fresh slots and add prior grads back once per element,
  // so repeated passes accumulate exactly (kernels sum term by term).
  std::vector<std::pair<Tensor, std::vector<double>>> stash;
  std::unordered_set<const Tensor::Impl*> seen;
  auto take = [&](const Tensor& t) {
    if (!t.defined() || !seen.insert(t.impl_.get()).second || !t.has_grad()) return;
    auto& d = t.impl();
    stash.emplace_back(t, std::move(d.grad));
    d.grad.clear();
    d.has_grad = false;
  };
  take(loss);
  for (const auto& node : nodes_) {
    take(node.output);
    for (const auto& in : node.inputs) take(in);
  }

  Tensor seed = loss;
  seed.ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
  nodes_.clear();

  for (auto& [t, old] : stash) {
    auto& d = t.impl();
    if (d.has_grad) {
      for (std::size_t i = 0; i < old.size(); ++i) d.grad[i] = old[i] + d.grad[i];
    } else {
      d.grad = std::move(old);
      d.has_grad = true;
    }
  }
}

}  // namespace mpq
