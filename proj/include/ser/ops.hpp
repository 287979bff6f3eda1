#pragma once

#include "ser/rng.hpp"
#include "ser/tensor.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace ser {

// Element-wise and structural ops. Each records its backward rule.

/// a + b. `b` may also match a trailing suffix of a's shape, in which case it
/// is broadcast over the leading axes.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

/// Mean along `axis`; the axis is removed from the result.
template <typename Scalar>
Tensor<Scalar> mean_over_axis(const Tensor<Scalar>& x, Index axis);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<Index>& order);

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x, Index axis_a = -2, Index axis_b = -1);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis);

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length);

/// [..., m, k] x [..., k, n]. A rank-2 right operand is shared across the
/// leading (batch) axes of the left one.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Affine map x W + b over the last axis; W is d_in x d_out. `b` may be
/// undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

// Network layers.

/// Stride-1 cross-correlation Y(i,j) = sum_pq X(i+p, j+q) K(p,q), summed over
/// input channels. x is [N,C,H,W] or [C,H,W]; kernel is [O,C,kh,kw]; bias is
/// [O] or undefined. Output spatial size is H + 2 padding - kh + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      Index padding = 0);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// 2x2 windows, stride 2, trailing odd row/column dropped. Ties route the
/// gradient to the first cell in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1);

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps = 1e-5);

/// Per-channel normalization of [N,C,H,W]. Train mode uses batch statistics
/// (population variance) and blends them into the running tensors with
/// `momentum`; eval mode uses the running tensors.
template <typename Scalar>
Tensor<Scalar> batch_norm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                            Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, Mode mode,
                            double momentum = 0.1, double eps = 1e-5);

/// Inverted dropout with a counter-based mask; identity in eval mode or when
/// p == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, Mode mode, const DropoutKey& key);

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Names of every differentiable op above, for gradient-check coverage.
std::span<const std::string_view> differentiable_ops();

}  // namespace ser
