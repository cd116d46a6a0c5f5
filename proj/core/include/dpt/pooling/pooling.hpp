#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpt/numerics/ops.hpp"

// Segment bookkeeping uses 0-based positions and segments. Position t joins
// segment c_t = sum_{i<t} b_i; the boundary at the last position never opens
// a new segment. Up-sampling hands position t the middle-block output of
// segment m_t - 1 with m_t = sum_{i<=t} b_i, or the null vector when m_t = 0,
// so a position only ever sees segments that closed at or before it.
namespace dpt::pooling {

using ad::Var;

struct PoolMap {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> groups;    // per row
  std::vector<std::int32_t> group_of;  // [batch * length]
  std::vector<std::int32_t> up_index;  // [batch * length], -1 = null

  std::size_t max_groups() const;
  std::size_t total_groups() const;
};

// b: [batch, length] row-major binary boundaries.
PoolMap build_pool_map(std::span<const std::uint8_t> b, std::size_t batch, std::size_t length);

// Values >= 0.5 count as boundaries.
template <typename T>
std::vector<std::uint8_t> to_bits(const Array<T>& b);

// Groups of k tokens; up-sampling index ceil((t + 2 - k) / k) in 1-based
// segment numbering for 0-based t, i.e. shifted right by k - 1.
PoolMap fixed_pool_map(std::size_t batch, std::size_t length, std::size_t k);

// Tokens over segments for a whole map.
double shortening_factor(const PoolMap& map);
double fixed_shortening_factor(std::size_t k, std::size_t length);

// h: [B, L, d] -> [B, max_groups, d] segment means; padded segments are 0.
// When `b_st` ([B, L]) requires gradients, each boundary b_i receives
// sum_{t > i} <ds_{c_t}, h_t - s_{c_t}> / n_{c_t}: the gradient of the
// membership weights of later positions, routed through the cumulative sum
// that assigns them.
template <typename T>
Var<T> mean_pool(const Var<T>& h, const PoolMap& map, const Var<T>& b_st = {});

// s_j = h at the last position of segment j. No boundary gradient.
template <typename T>
Var<T> subsample_pool(const Var<T>& h, const PoolMap& map);

// s: [B, G, d] with G >= max_groups, null: [d] -> [B, L, d].
template <typename T>
Var<T> upsample(const Var<T>& s, const Var<T>& null_vec, const PoolMap& map);

// Dense one-hot assignment [L, G] for one row of b.
Array<double> pool_matrix(std::span<const std::uint8_t> b);

// Dense soft relaxation for gradient checks. beta: [B, L] boundary
// probabilities. Returns P: [B, L + 1, L + 1] with P[i][j] the probability
// that exactly j of beta_0..beta_{i-1} fire.
template <typename T>
Var<T> poisson_binomial(const Var<T>& beta);

// Soft pooling: segment j averages h with weights P(c_t = j). [B, L, d].
template <typename T>
Var<T> soft_mean_pool(const Var<T>& h, const Var<T>& count_probs);

// Soft up-sampling: u_t = P(m_t = 0) null + sum_m P(m_t = m) s_{m-1}.
// s: [B, L, d] from soft_mean_pool. -> [B, L, d].
template <typename T>
Var<T> soft_upsample(const Var<T>& s, const Var<T>& null_vec, const Var<T>& count_probs);

}  // namespace dpt::pooling
