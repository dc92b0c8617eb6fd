// SPDX-License-Identifier: Apache-2.0
//
// Uniform fake quantization with a learnable step size:
//
//   v_q = round(clip(v / s, min_b, max_b)) * s
//
// round() is half-away-from-zero. The backward pass is the straight-through
// estimator with the step-size gradient of learned-step-size quantization:
// with u = v/s,
//
//   min_b < u < max_b :  dv_q/dv = 1,  dv_q/ds = round(u) - u
//   u <= min_b        :  dv_q/dv = 0,  dv_q/ds = min_b
//   u >= max_b        :  dv_q/dv = 0,  dv_q/ds = max_b
//
// and the step-size gradient is optionally multiplied by 1/sqrt(N * max_b).
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mpq/tensor.hpp"

namespace mpq {

enum class TensorKind { weights, activations };

std::string_view to_string(TensorKind kind);
TensorKind parse_tensor_kind(std::string_view text);

struct QuantSpec {
  int bits = 8;
  TensorKind kind = TensorKind::weights;

  // Throws std::invalid_argument for bits outside [2, 16].
  static QuantSpec make(int bits, TensorKind kind);

  std::int64_t min_level() const;
  std::int64_t max_level() const;
};

inline constexpr double kMinScale = 1e-6;
inline constexpr double kZeroStatisticsScale = 1e-3;

// Integer codes round(clip(v/s)).
std::vector<std::int64_t> quantize_codes(std::span<const double> v, double scale, QuantSpec spec);

std::vector<double> quantize_forward(std::span<const double> v, double scale, QuantSpec spec);

struct QuantGrads {
  std::vector<double> grad_v;
  double grad_s = 0.0;
};

// Gradient-scale factor 1/sqrt(N * max_b).
double step_size_grad_scale(std::size_t count, QuantSpec spec);

QuantGrads quantize_backward(std::span<const double> upstream, std::span<const double> v,
                             double scale, QuantSpec spec, bool scale_step_grad = true);

// s = 2 * mean(|w|) / sqrt(max_b), or kZeroStatisticsScale when mean(|w|) = 0.
double init_scale_statistics(std::span<const double> w, QuantSpec spec);

// s = 0.1 / b
double init_scale_uniform(QuantSpec spec);

// Differentiable fake-quantization node. `scale` is a one-element tensor.
Tensor fake_quantize(Graph& graph, const Tensor& v, const Tensor& scale, QuantSpec spec,
                     bool scale_step_grad = true);

}  // namespace mpq
