// SPDX-License-Identifier: Apache-2.0
#include "mpq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mpq {

std::string_view to_string(TensorKind kind) {
  return kind == TensorKind::weights ? "w" : "a";
}

TensorKind parse_tensor_kind(std::string_view text) {
  if (text == "w" || text == "weights") return TensorKind::weights;
  if (text == "a" || text == "activations") return TensorKind::activations;
  throw std::invalid_argument("unknown tensor kind '" + std::string(text) + "'");
}

QuantSpec QuantSpec::make(int bits, TensorKind kind) {
  if (bits < 2 || bits > 16) {
    throw std::invalid_argument("bit-width must lie in [2,16], got " + std::to_string(bits));
  }
  return QuantSpec{bits, kind};
}

std::int64_t QuantSpec::min_level() const {
  return kind == TensorKind::weights ? -(std::int64_t{1} << (bits - 1)) : 0;
}

std::int64_t QuantSpec::max_level() const {
  return kind == TensorKind::weights ? (std::int64_t{1} << (bits - 1)) - 1
                                     : (std::int64_t{1} << bits) - 1;
}

namespace {

void check_scale(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::domain_error("quantizer scale must be positive and finite, got " +
                            std::to_string(scale));
  }
}

std::int64_t code_of(double v, double scale, double lo, double hi) {
  const double u = std::clamp(v / scale, lo, hi);
  return static_cast<std::int64_t>(std::round(u));
}

}  // namespace

std::vector<std::int64_t> quantize_codes(std::span<const double> v, double scale,
                                         QuantSpec spec) {
  check_scale(scale);
  const double lo = static_cast<double>(spec.min_level());
  const double hi = static_cast<double>(spec.max_level());
  std::vector<std::int64_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = code_of(v[i], scale, lo, hi);
  return out;
}

std::vector<double> quantize_forward(std::span<const double> v, double scale, QuantSpec spec) {
  check_scale(scale);
  const double lo = static_cast<double>(spec.min_level());
  const double hi = static_cast<double>(spec.max_level());
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<double>(code_of(v[i], scale, lo, hi)) * scale;
  }
  return out;
}

double step_size_grad_scale(std::size_t count, QuantSpec spec) {
  return 1.0 / std::sqrt(static_cast<double>(count) * static_cast<double>(spec.max_level()));
}

QuantGrads quantize_backward(std::span<const double> upstream, std::span<const double> v,
                             double scale, QuantSpec spec, bool scale_step_grad) {
  check_scale(scale);
  if (upstream.size() != v.size()) {
    throw ShapeError("quantize_backward: upstream gradient has " +
                     std::to_string(upstream.size()) + " elements, input has " +
                     std::to_string(v.size()));
  }
  const double lo = static_cast<double>(spec.min_level());
  const double hi = static_cast<double>(spec.max_level());
  QuantGrads g;
  g.grad_v.assign(v.size(), 0.0);
  double gs = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double u = v[i] / scale;
    if (u <= lo) {
      gs += upstream[i] * lo;
    } else if (u >= hi) {
      gs += upstream[i] * hi;
    } else {
      g.grad_v[i] = upstream[i];
      gs += upstream[i] * (std::round(u) - u);
    }
  }
  if (scale_step_grad && !v.empty()) gs *= step_size_grad_scale(v.size(), spec);
  g.grad_s = gs;
  return g;
}

double init_scale_statistics(std::span<const double> w, QuantSpec spec) {
  if (w.empty()) throw std::invalid_argument("init_scale_statistics: empty tensor");
  double acc = 0.0;
  for (double x : w) acc += std::abs(x);
  const double mean_abs = acc / static_cast<double>(w.size());
  if (mean_abs == 0.0) return kZeroStatisticsScale;
  return 2.0 * mean_abs / std::sqrt(static_cast<double>(spec.max_level()));
}

double init_scale_uniform(QuantSpec spec) {
  if (spec.bits < 2) throw std::invalid_argument("init_scale_uniform: bits must be >= 2");
  return 0.1 / static_cast<double>(spec.bits);
}

Tensor fake_quantize(Graph& graph, const Tensor& v, const Tensor& scale, QuantSpec spec,
                     bool scale_step_grad) {
  if (scale.numel() != 1) {
    throw ShapeError("fake_quantize: scale must hold one value, got " +
                     shape_str(scale.shape()));
  }
  Tensor out = Tensor::from(v.shape(), quantize_forward(v.values(), scale.item(), spec));
  return graph.record(out, {v, scale}, "fake_quantize",
                      [v, scale, spec, scale_step_grad](std::span<const double> dout) mutable {
                        auto g = quantize_backward(dout, v.values(), scale.item(), spec,
                                                   scale_step_grad);
                        if (v.requires_grad()) {
                          auto dv = v.ensure_grad();
                          for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g.grad_v[i];
                        }
                        if (scale.requires_grad()) scale.ensure_grad()[0] += g.grad_s;
                      });
}

}  // namespace mpq
