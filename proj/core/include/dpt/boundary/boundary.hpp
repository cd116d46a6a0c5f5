#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpt/numerics/ops.hpp"

namespace dpt::boundary {

using ad::ParameterSet;
using ad::Rng;
using ad::Var;

inline constexpr double kProbClamp = 1e-6;

// Two-layer perceptron d -> hidden -> 1 with GELU, applied per position.
template <typename T>
struct Predictor {
  Var<T> w1, b1, w2, b2;
};

// Registers `<prefix>.w1` ... in `params`. Weights ~ N(0, 0.02), hidden bias
// 0, output bias -2 so the initial boundary rate is about sigmoid(-2).
template <typename T>
Predictor<T> make_predictor(ParameterSet<T>& params, const std::string& prefix, std::size_t d,
                            std::size_t hidden, Rng& rng);

// h: [B, L, d] -> b_hat: [B, L], strictly inside (0, 1).
template <typename T>
Var<T> predict_probs(const Var<T>& h, const Predictor<T>& p);

// sigmoid(log(b u / ((1 - b)(1 - u))) / tau), inputs clamped to
// [1e-6, 1 - 1e-6]. `u` has the shape of b_hat.
template <typename T>
Var<T> gumbel_sigmoid(const Var<T>& b_hat, const Array<T>& u, T tau);

// Uniform(0, 1) noise of the given shape.
template <typename T>
Array<T> uniform_noise(const Shape& shape, Rng& rng);

// Rounds to {0, 1} (0.5 rounds up) with a straight-through gradient.
template <typename T>
Var<T> harden(const Var<T>& v);

// -sum p ln p with 0 ln 0 = 0. Distributions off by more than 1e-4 from
// unit mass raise DataError.
double entropy_nats(std::span<const double> p);
double entropy_bits(std::span<const double> p);

// Per-row entropies (nats) of softmax(logits) over the last axis.
template <typename T>
std::vector<double> entropy_from_logits(const Array<T>& logits);

// b_t = 1 iff t >= 1 and H_t > H_i for every i in [max(0, t - k), t - 1]
// (0-based). The first position never fires.
std::vector<std::uint8_t> spike_boundaries(std::span<const double> h, std::size_t k);

// Mean binary cross-entropy of clamped b_hat against binary gold labels.
template <typename T>
Var<T> bce_loss(const Var<T>& b_hat, std::span<const std::uint8_t> gold);

// log C(l, k) + k log alpha + (l - k) log(1 - alpha) via log-gamma.
double binomial_log_prior(double l, double k, double alpha);

// Mean over rows of -(1/l) * binomial_log_prior(l, k_row, alpha) where
// k_row is the row sum of `b` ([B, L], typically straight-through hard
// samples) and l = L.
template <typename T>
Var<T> binomial_prior_loss(const Var<T>& b, T alpha);

}  // namespace dpt::boundary
