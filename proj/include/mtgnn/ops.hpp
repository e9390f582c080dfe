#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mtgnn/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active tape
// when one of its inputs requires grad.
namespace mtgnn {

/// Batched matrix product [..,m,k]·[..,k,n]. Batch prefixes must be equal, or
/// one operand must be a plain matrix that is broadcast over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose(const Tensor& x);

/// Dilated valid convolution along the last axis:
///   out[b,o,n,τ] = Σ_i Σ_s kernel[o,i,0,s] · in[b,i,n,τ + d(k-1) - d·s]
/// i.e. output step τ looks at input steps τ', τ'-d, ..., τ'-d(k-1) where
/// τ' = τ + d(k-1). input [b,c_in,n,t], kernel [c_out,c_in,1,k].
Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, std::size_t dilation);
/// Same, plus a per-output-channel bias of shape [c_out].
Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t dilation);

/// out[b,c,v,t] = Σ_w adj[v,w] · x[b,c,w,t]; adj is [n,n] or per-sample [b,n,n].
Tensor node_propagate(const Tensor& adj, const Tensor& x);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);  // gradient at exactly 0 is 0
Tensor abs(const Tensor& x);   // gradient at exactly 0 is 0

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double c);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Keeps the last `steps` entries of the final axis.
Tensor slice_last_steps(const Tensor& x, std::size_t steps);
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> index);
Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax(const Tensor& x, std::size_t axis);

/// Inverted dropout: kept entries are scaled by 1/(1-p) in training mode; the
/// op is the identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

/// Normalizes to zero mean / unit variance over `axes` (one group per index of
/// the remaining axes), then applies `weight`/`bias` if defined. The affine
/// tensors have the extents of `axes`, in axis order.
Tensor layer_norm(const Tensor& x, const std::vector<std::size_t>& axes, const Tensor& weight,
                  const Tensor& bias, double eps = 1e-5);

/// Row-wise top-k mask over the last axis: keeps the k largest entries of each
/// row (ties to the lowest index), zeroes the rest. Gradients pass through the
/// retained entries only.
Tensor topk_rows(const Tensor& x, std::size_t k);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// Indices of the k largest entries of `row`, ties broken by lowest index.
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);

}  // namespace mtgnn
