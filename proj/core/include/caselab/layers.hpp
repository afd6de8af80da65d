#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "caselab/tensor.hpp"

namespace caselab {

// Layer kinds. Conv2d and Dense own parameters ({weight, bias}); the rest
// are parameter-free. Inputs are single images, no batch axis.

/// weight: [out, in, k, k], bias: [out]; input [in, H, W].
struct Conv2d {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

/// 2x2 window, stride 2, floor on odd extents.
struct MaxPool2x2 {
  friend bool operator==(const MaxPool2x2&, const MaxPool2x2&) = default;
};

/// [C, H, W] -> [C]
struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

/// weight: [out, in], bias: [out]; input [in].
struct Dense {
  std::size_t in_features = 1;
  std::size_t out_features = 1;

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct Softmax {
  friend bool operator==(const Softmax&, const Softmax&) = default;
};

using LayerKind = std::variant<Conv2d, Relu, MaxPool2x2, GlobalAvgPool, Dense, Softmax>;

struct LayerSpec {
  std::string name;
  LayerKind kind;

  std::string kind_name() const;
  /// Number of parameter tensors the layer expects (0 or 2).
  std::size_t param_count() const;
  /// Expected parameter shapes, in order.
  std::vector<Shape> param_shapes() const;
  /// Output shape for a given input shape; throws ShapeError when incompatible.
  Shape output_shape(const Shape& input) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Throws std::invalid_argument when the spec violates its own constraints
/// (zero stride, even kernel, zero extents).
void validate(const LayerSpec& spec);

Tensor layer_forward(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& input);

struct LayerGradients {
  Tensor input;                // d<cotangent, out>/d input
  std::vector<Tensor> params;  // same order as the layer's params; empty for parameter-free layers
};

/// Vector-Jacobian product for the input and, if `with_params`, for the parameters.
LayerGradients layer_backward(const LayerSpec& spec, std::span<const Tensor> params,
                              const Tensor& input, const Tensor& cotangent, bool with_params);

/// Vector-Jacobian product with respect to the input only. Max-pool routes
/// each window's cotangent to its first arg-max in row-major order.
Tensor layer_vjp(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& input,
                 const Tensor& cotangent);

/// Bilinear upsampling of a rank-2 map by an integer factor using half-pixel
/// centres: output (i, j) samples source ((i+0.5)/beta - 0.5, (j+0.5)/beta - 0.5),
/// clamped to the border.
Tensor bilinear_upsample(const Tensor& map, std::size_t beta);

/// Numerically stable softmax of a rank-1 tensor; rejects non-finite input.
Tensor softmax(const Tensor& logits);

}  // namespace caselab
