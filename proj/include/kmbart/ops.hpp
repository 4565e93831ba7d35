#pragma once

#include <span>
#include <vector>

#include "kmbart/rng.hpp"
#include "kmbart/tensor.hpp"

// Differentiable primitives. Every op takes the tape first, computes its
// forward value eagerly, and records a backward rule when an input needs a
// gradient. Shapes are checked up front and reported with DimensionError.
namespace kmbart {

enum class Reduction { mean, sum };

// a[m x k] * b[k x n]
template <typename S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> transpose(Tape<S>& tape, const Tensor<S>& a);

template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);

// x[r x c] + bias[c], broadcast over rows.
template <typename S>
Tensor<S> add_bias(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& bias);

// x + constant; the constant (e.g. an attention mask of 0 / -inf) gets no gradient.
template <typename S>
Tensor<S> add_constant(Tape<S>& tape, const Tensor<S>& x, const typename Tensor<S>::Array& constant);

template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S factor);

template <typename S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& a);

// x * W + b for x[r x in], W[in x out], b[out].
template <typename S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

// Exact (erf) GELU.
template <typename S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& x);

// Row-wise normalization over the last axis, then gain/bias.
template <typename S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5));

// Normalization only, no affine.
template <typename S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, S eps = S(1e-5));

template <typename S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& x);

template <typename S>
Tensor<S> log_softmax(Tape<S>& tape, const Tensor<S>& x);

template <typename S>
Tensor<S> concat_rows(Tape<S>& tape, const std::vector<Tensor<S>>& parts);

template <typename S>
Tensor<S> concat_cols(Tape<S>& tape, const std::vector<Tensor<S>>& parts);

template <typename S>
Tensor<S> slice_rows(Tape<S>& tape, const Tensor<S>& x, Index start, Index count);

template <typename S>
Tensor<S> slice_cols(Tape<S>& tape, const Tensor<S>& x, Index start, Index count);

// out[i] = x[indices[i]]; backward scatter-adds. Indices may repeat.
template <typename S>
Tensor<S> gather_rows(Tape<S>& tape, const Tensor<S>& x, std::span<const int> indices);

template <typename S>
Tensor<S> embedding_lookup(Tape<S>& tape, const Tensor<S>& table, std::span<const int> ids) {
  return gather_rows(tape, table, ids);
}

// Inverted dropout. Identity (same handle) when !training or rate == 0.
// The mask comes from rng and is a constant for backward.
template <typename S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double rate, Rng* rng, bool training);

// -ln softmax(logits)[t, target_t], reduced over positions whose target is
// not ignore_index. Throws EmptyLossError when every position is ignored.
template <typename S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits, std::span<const int> targets,
                        int ignore_index, Reduction reduction = Reduction::mean);

// Mean over rows of sum_c p_c (ln p_c - log_q_c) with 0 ln 0 = 0. p is a
// constant target; each row must be a probability vector within 1e-4.
template <typename S>
Tensor<S> kl_divergence(Tape<S>& tape, const Tensor<S>& p, const Tensor<S>& log_q,
                        Reduction reduction = Reduction::mean);

}  // namespace kmbart
