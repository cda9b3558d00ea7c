#pragma once

#include <vector>

#include "fixformer/tensor.hpp"

namespace fixformer {

// Differentiable ops over 2-d (and elementwise n-d) tensors. Every op
// records its backward on the active tape when an input requires grad.
// Transposes and slices materialize; there are no strided views.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// y = x * w^T (+ b), with w stored [out x in]. Pass an undefined Tensor
// to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// x [n x d] plus b [d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);

// Row-wise softmax with max subtraction; rows of the result sum to 1.
Tensor softmax_rows(const Tensor& x);

// Per-row standardization followed by the affine (gain, bias).
Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Exact Gaussian-CDF form x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor sum_all(const Tensor& x);

Tensor row_slice(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor col_slice(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Mean cross-entropy from logits [B x C] with log-sum-exp stabilization.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);

}  // namespace fixformer
