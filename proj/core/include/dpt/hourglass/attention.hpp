#pragma once

#include <span>
#include <string>

#include "dpt/numerics/ops.hpp"

namespace dpt::hourglass {

using ad::ParameterSet;
using ad::Rng;
using ad::Var;

// One post-norm Transformer layer with relative-position attention:
// score(i, j) = (q_i + u) k_j + (q_i + v) r_{i-j}, r = R W_r over sinusoids
// of the distance.
template <typename T>
struct LayerParams {
  Var<T> w_qkv;  // [d, 3d]
  Var<T> w_out;  // [d, d]
  Var<T> w_rel;  // [d, d]
  Var<T> u, v;   // [heads, d / heads]
  Var<T> ln1_g, ln1_b;
  Var<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Var<T> ln2_g, ln2_b;
};

template <typename T>
LayerParams<T> make_layer(ParameterSet<T>& params, const std::string& prefix, std::size_t d, std::size_t ff,
                          std::size_t heads, Rng& rng);

// Sinusoidal encodings of distances 0..n-1, [n, d]. Row r depends only on r.
template <typename T>
Array<T> sinusoids(std::size_t n, std::size_t d);

struct LayerContext {
  std::size_t heads = 1;
  double dropout = 0;
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

// x: [B, L, d]. Row b attends causally over its first valid[b] positions.
template <typename T>
Var<T> layer_forward(const Var<T>& x, const LayerParams<T>& p, std::span<const std::size_t> valid,
                     const LayerContext& ctx);

}  // namespace dpt::hourglass
