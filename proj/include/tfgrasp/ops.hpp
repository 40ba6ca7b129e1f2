#pragma once

// Differentiable tensor operations. Every function is a pure function of its
// inputs; when a Tape is active the backward rule is recorded on it.
// Instantiated for float and double.

#include <memory>
#include <span>
#include <vector>

#include "tfgrasp/tensor.hpp"

namespace tfgrasp {

// Shared flat index map for gather-style operations.
using IndexMap = std::shared_ptr<const std::vector<Index>>;

// a [.., m, k] x b [.., k, n] -> [.., m, n]. Batch dimensions broadcast.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// a [.., m, k] x b[.., n, k]^T -> [.., m, n].
template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// x [.., in] w [in, out] (+ bias [out]) -> [.., out]. bias may be undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias);

// Elementwise binary ops. b either matches a exactly or matches a trailing
// block of a's shape, in which case it is repeated over the leading dims.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);
// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis);

// Normalizes over the last dimension, then applies gamma/beta.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = 1e-5);

// Non-overlapping patch projection: x [.., C, H, W], kernels [D, C, p, p],
// bias [D] or undefined -> [.., D, H/p, W/p].
template <typename Scalar>
Tensor<Scalar> strided_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernels,
                              const Tensor<Scalar>& bias, Index stride);

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::span<const Index> order);
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::initializer_list<Index> order) {
  return permute(x, std::span<const Index>(order.begin(), order.size()));
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, Index axis);

// out.flat[i] = x.flat[index[i]]; the gradient scatters back additively.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, IndexMap index, Shape out_shape);

// x viewed as rows of its last dimension: out row r = x row rows[r].
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, IndexMap rows);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

// Mean over all elements of (pred - target)^2.
template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

}  // namespace tfgrasp
