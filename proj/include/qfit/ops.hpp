#pragma once

#include <span>

#include "qfit/tensor.hpp"

// Differentiable ops. Image tensors use (N, C, H, W) order.
namespace qfit::ad {

// Elementwise, identical shapes required.
Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor div(const Tensor& x, const Tensor& y);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);

// relu'(0) = 0.
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// (m, k) x (k, n) -> (m, n).
Tensor matmul(const Tensor& a, const Tensor& b);

// Scalar results of shape (1).
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_abs_mean(const Tensor& x);

/// Stride-1 cross-correlation with zero same-padding.
/// x: (N, Cin, H, W), weight: (Cout, Cin, k, k) with k odd, bias: (Cout).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-(n, c) plane normalization with biased (1/HW) variance, then affine.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_channels(std::span<const Tensor> parts);

/// Depthwise "valid" filtering of every (n, c) plane with one fixed k x k
/// window: output (N, C, H-k+1, W-k+1).
Tensor filter_valid(const Tensor& x, std::span<const double> window, std::size_t k);

/// (1, C, H, W) -> (H*W, C): one row per pixel.
Tensor channels_to_rows(const Tensor& x);

}  // namespace qfit::ad
