#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpt/boundary/boundary.hpp"
#include "dpt/hourglass/attention.hpp"
#include "dpt/hourglass/config.hpp"
#include "dpt/pooling/pooling.hpp"

namespace dpt::hourglass {

struct ForwardOptions {
  bool training = false;
  // Replaces hard boundaries by their Bernoulli relaxation (gradient tests).
  // b_st is then b_hat itself, so every loss term is smooth.
  bool soft_boundaries = false;
  Rng* rng = nullptr;  // dropout and Gumbel noise; required when training
};

template <typename T>
struct ForwardResult {
  Var<T> logits;  // [B, L, vocab]
  Var<T> b_hat;   // [B, L] predictor probabilities (predictor methods only)
  Var<T> b_st;    // [B, L] hard boundaries, straight-through to b_hat or the Gumbel sample
  std::vector<std::uint8_t> bits;  // [B * L] boundaries used for pooling
  pooling::PoolMap map;
  std::size_t batch = 0, length = 0;
  double sf = 1;  // positions per segment over the batch
};

template <typename T>
struct LossParts {
  Var<T> total;
  double lm_nats = 0;
  double aux = 0;
};

// Three-block hourglass language model. Block 1 runs over characters, block
// 2 over segments and block 3 over characters again after up-sampling and
// the skip connection h + u.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  // tokens: [batch * length] row-major.
  ForwardResult<T> forward(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t length,
                           const ForwardOptions& opts) const;

  // LM cross-entropy (nats) plus the method's auxiliary term. `gold` holds
  // teacher boundaries for unigram and entropy and is ignored otherwise;
  // `weights` optionally restricts the LM mean to scored positions.
  LossParts<T> loss(const ForwardResult<T>& fwd, std::span<const std::int32_t> targets,
                    std::span<const std::uint8_t> gold, std::span<const T> weights = {}) const;

 private:
  Var<T> run_block(const std::vector<LayerParams<T>>& block, Var<T> x, std::span<const std::size_t> valid,
                   const ForwardOptions& opts) const;

  ModelConfig cfg_;
  ad::ParameterSet<T> params_;
  Var<T> embed_;
  std::vector<LayerParams<T>> block1_, block2_, block3_;
  Var<T> null_;
  boundary::Predictor<T> predictor_;
  Var<T> out_w_, out_b_;
};

// Spike boundaries of each row's predictive entropies: logits [B, L, V].
template <typename T>
std::vector<std::uint8_t> entropy_teacher(const Array<T>& logits, std::size_t k);

// Scalar parameter count of a freshly built model.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace dpt::hourglass
