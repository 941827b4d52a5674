#pragma once

#include <cstddef>
#include <vector>

#include "essa/tensor.hpp"

namespace essa {

/// Differentiable operations. Each op computes its forward value and, when a
/// tape is active and any input requires grad, records a backward rule that
/// accumulates input gradients additively. Gradients of inputs that do not
/// require grad are never computed, so frozen weight matrices cost nothing
/// in the backward pass.

/// Standard matrix product a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// a[m x k] * b[n x k]^T -> [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Affine map over row vectors: x[T x in] * w[out x in]^T (+ bias[out]).
/// Pass an empty (default) Tensor to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// x[T x d] + row vector v[d] broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

/// Sum of any number of same-shape tensors.
Tensor add_n(const std::vector<Tensor>& parts);

/// Temperature softmax along `axis` (0 or 1 for matrices, 0 for vectors),
/// numerically stabilized by max subtraction. temperature must be > 0.
Tensor softmax(const Tensor& x, int axis, double temperature);

/// Row-wise log(softmax(x / temperature)).
Tensor log_softmax(const Tensor& x, double temperature);

/// Per-row normalization to zero mean / unit population variance followed by
/// elementwise gain and bias over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

/// tanh-approximation GELU (the approximation is part of the contract so the
/// finite-difference tests check the function actually implemented).
Tensor gelu(const Tensor& x);

/// -log softmax(logits)[label] for a single logit vector.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

/// Mean cross-entropy over the rows of logits[B x K].
Tensor cross_entropy_mean(const Tensor& logits,
                          const std::vector<std::size_t>& labels);

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Rows scaled to unit L2 norm (norms below 1e-12 are floored and treated
/// as constants in the backward pass).
Tensor l2_normalize_rows(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Inner product with a constant weight vector -> scalar. The weights are
/// plain data and receive no gradient.
Tensor dot_const(const Tensor& x, const std::vector<double>& weights);

}  // namespace essa
