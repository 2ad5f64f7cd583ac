#pragma once

#include <span>

#include "latefuse/core/autodiff.hpp"

namespace latefuse {

// Differentiable operations recorded on a Tape. All operate on rank-2 values
// unless noted; vectors (gains, biases) are rank 1. Shape violations throw
// DimensionError, bad indices throw IndexError.

inline constexpr double kLayerNormEps = 1e-5;

enum class Mask { none, causal };

// a [m x k] * b [k x n]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

// a [m x k] * b^T, b [n x k]
template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

// Adds a length-n vector to every row of x [m x n].
template <typename T>
Var add_row(Tape<T>& tape, Var x, Var bias);

// Elementwise product.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

// Multiplication by a constant (not differentiated w.r.t. the constant).
template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

// GELU, tanh approximation.
template <typename T>
Var gelu(Tape<T>& tape, Var x);

// Row-wise layer norm over the full width, then gain/bias per column.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, T eps = T(kLayerNormEps));

// Layer norm applied independently to `groups` equal slices of every row.
// gain/bias still have one entry per column. groups == 1 is layer_norm.
template <typename T>
Var grouped_layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, std::size_t groups,
                       T eps = T(kLayerNormEps));

// Row softmax, max-subtracted. With Mask::causal, entry (i, j) for j > i is
// excluded and comes out exactly zero.
template <typename T>
Var softmax_rows(Tape<T>& tape, Var x, Mask mask);

// Mean negative log-likelihood of targets[t] under row t of logits.
// Result has shape [1].
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> targets);

// Gathers rows of table [V x d] by id.
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids);

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t width);

template <typename T>
Var concat_cols(Tape<T>& tape, std::span<const Var> parts);

// Applies (mixer ⊗ I_{d_head}) to every row of x [m x H*d_head]:
// output block h = sum_{h'} mixer[h, h'] * input block h'.
template <typename T>
Var kron_mix(Tape<T>& tape, Var x, Var mixer);

// Sum of all entries, shape [1].
template <typename T>
Var sum(Tape<T>& tape, Var x);

// Dense equivalent of kron_mix's operator: (mixer ⊗ I_{d_head}), [H*d x H*d].
template <typename T>
BasicTensor<T> kronecker_lift(const BasicTensor<T>& mixer, std::size_t d_head);

}  // namespace latefuse
