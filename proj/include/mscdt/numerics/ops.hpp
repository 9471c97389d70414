#pragma once

#include <cstddef>
#include <vector>

#include "mscdt/numerics/autograd.hpp"

namespace mscdt::ops {

// Elementwise arithmetic. Operands must have identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
/// Sum of equally shaped terms, accumulated left to right.
template <typename T> Var<T> add_n(const std::vector<Var<T>>& terms);

// Reductions to a rank-0 scalar.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// mean(|a - b|); the subgradient at a tie is 0.
template <typename T> Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b);
/// sum(w * x) with a constant weight tensor.
template <typename T> Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

/// Numerically stable softmax along `axis` (max-subtracted).
template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);
/// x * Phi(x) with the exact Gaussian CDF.
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(0.1));
/// Parameter-free normalization over `axis`: (x - mean) / sqrt(var + eps),
/// population variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, std::size_t axis, T epsilon = T(1e-5));

/// {H, W, C} -> {H/r, W/r, r*r*C}; output channel (dy*r + dx)*C + c.
template <typename T> Var<T> pixel_unshuffle(const Var<T>& x, std::size_t r);
/// Exact inverse of pixel_unshuffle.
template <typename T> Var<T> pixel_shuffle(const Var<T>& x, std::size_t r);

enum class ConvMode {
  pointwise_1x1,  // kernel {Cin, Cout}
  depthwise_3x3,  // kernel {3, 3, C}
  full_3x3,       // kernel {3, 3, Cin, Cout}
};
enum class Padding { zero, replicate };

/// Stride-1 convolution over {H, W, C} features. 3x3 modes pad by one pixel
/// so spatial extents are preserved.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, ConvMode mode,
              Padding padding = Padding::zero);

/// y = x W + b for x of shape {in} or {n, in}; W is {in, out}, b is {out}.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Adds a per-channel bias along the last axis.
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b);
/// x * scale + shift, with {C} vectors broadcast over all leading axes.
template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale,
                      const Var<T>& shift);

/// Concatenates along the last axis; leading extents must agree.
template <typename T> Var<T> concat_last(const std::vector<Var<T>>& parts);
/// Stacks equally shaped tensors along a new trailing axis.
template <typename T> Var<T> stack_last(const std::vector<Var<T>>& parts);
/// Selects index `i` of the last axis, dropping that axis.
template <typename T> Var<T> slice_last(const Var<T>& x, std::size_t i);

/// {H, W, C} -> {C}
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

/// Per-head transposed (channel) attention on {H, W, C} features.
/// For head g with c = C / heads channels, A = softmax_row(K Q^T / (|gamma_g|
/// + 1e-8)) is c x c and out = A V. When `maps` is non-null the attention
/// matrices are appended to it, one {c, c} tensor per head.
template <typename T>
Var<T> channel_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                         const Var<T>& gamma, std::size_t heads,
                         std::vector<Tensor<T>>* maps = nullptr);

template <typename T> Var<T> detach(const Var<T>& x);

}  // namespace mscdt::ops
