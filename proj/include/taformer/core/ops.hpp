#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "taformer/core/tensor.hpp"

namespace taf {

// Elementwise binary ops broadcast numpy-style over size-1 (or missing
// leading) dimensions. Backward sums gradients over broadcast dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
inline Tensor operator-(const Tensor& x) { return neg(x); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
/// log(1 + e^x), overflow-safe.
Tensor softplus(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double p);
Tensor clamp_min(const Tensor& x, double lo);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
/// [a, b, ...] -> [b, a, ...]
Tensor swap_leading(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] (+ bias[out]). `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Normalises over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Unit-normalises each vector along the last axis; all-zero vectors map to zero.
Tensor l2_normalize(const Tensor& x);
/// x[Cin, H, W], weight[Cout, Cin, k, k], bias[Cout] -> [Cout, Ho, Wo]
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

struct AttentionResult {
  Tensor output;
  Tensor weights;  // [batch, heads, seq, seq], detached
};

/// Multi-head scaled dot-product attention over `batch` independent sequences
/// of length `seq`. q, k, v hold batch*seq rows of C channels (any leading
/// shape); head h uses channels [h*C/heads, (h+1)*C/heads).
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                                     std::size_t seq, std::size_t heads);

inline Tensor detach(const Tensor& x) { return x.detach(); }

}  // namespace taf
