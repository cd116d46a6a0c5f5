#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dpt/numerics/autodiff.hpp"
#include "dpt/numerics/gemm.hpp"

// Differentiable operations. Binary element-wise ops accept equal shapes or
// one operand whose shape is a suffix of the other's (broadcast over leading
// axes); anything else is a ConfigError naming both shapes.
namespace dpt::ad {

using Rng = std::mt19937_64;
using blas::Op;

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);

// a: [..., m, k]. b: [k, n] (shared weight) or [..., k, n] with the same
// leading axes. Transpose flags act on the last two axes.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Op op_a = Op::kNone, Op op_b = Op::kNone);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> sum_axis(const Var<T>& x, int axis);
template <typename T> Var<T> mean_axis(const Var<T>& x, int axis);

template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t len);
// Shifts right by n along axis, filling the vacated head with `fill`.
template <typename T> Var<T> shift_right(const Var<T>& x, int axis, std::size_t n, T fill = T(0));
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
// Rank <= 4.
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);
// x: S -> [n, S...]; gradient sums over the new axis.
template <typename T> Var<T> expand_leading(const Var<T>& x, std::size_t n);

template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> log_softmax(const Var<T>& x);
// x / sum(x) over the last axis; rows must have a positive sum.
template <typename T> Var<T> normalize_last(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);
template <typename T> Var<T> lgamma(const Var<T>& x);

// Normalizes the last axis; a zero-variance row maps to zeros before the
// affine terms because the denominator is floored by eps.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// table: [V, d]; ids shaped `id_shape` -> [id_shape..., d].
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids, const Shape& id_shape);

// Inverted dropout; the identity when !training or p == 0.
template <typename T> Var<T> dropout(const Var<T>& x, T p, Rng& rng, bool training);

// mask: same shape as x or a suffix of it; nonzero entries become `value`.
template <typename T>
Var<T> masked_fill(const Var<T>& x, const Array<std::uint8_t>& mask, T value);

// scores: [B, H, Lq, Lk]. Row (b, h, i) may attend to key j iff j <= i and
// j < valid[b]; excluded keys get exactly zero probability.
template <typename T>
Var<T> causal_softmax(const Var<T>& scores, std::span<const std::size_t> valid);

// causal_softmax(content + rel_shift(position), valid) in one pass, without
// materializing the shifted map or the summed scores.
template <typename T>
Var<T> rel_causal_softmax(const Var<T>& content, const Var<T>& position, std::span<const std::size_t> valid);

// x: [..., L, L] indexed by (query i, distance r) -> [..., L, L] indexed by
// (query i, key j) with out[i][j] = x[i][i - j] for j <= i and 0 above.
template <typename T> Var<T> rel_shift(const Var<T>& x);

// Forward value `hard`, gradient passed to `soft` unchanged.
template <typename T> Var<T> straight_through(const Var<T>& soft, Array<T> hard);

template <typename T> Var<T> detach(const Var<T>& x);

// Mean negative log-likelihood (nats) of targets under softmax(logits) over
// the last axis. Rows with weight 0 are excluded from the mean.
template <typename T>
Var<T> nll_mean(const Var<T>& logits, std::span<const std::int32_t> targets,
                std::span<const T> weights = {});

// Affine map x W + b with W: [in, out], b: [out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

}  // namespace dpt::ad
