#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpt/corpus/corpus.hpp"
#include "dpt/error.hpp"
#include "dpt/evaluation/eval.hpp"
#include "dpt/hourglass/checkpoint.hpp"
#include "dpt/hourglass/model.hpp"

namespace dpt::trainer {

struct OptimConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 0.25;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;
  std::size_t batch = 8;
  std::size_t chunk_len = 128;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  std::size_t val_every = 0;  // 0: every 5% of total_steps
  // Share of the first steps in which the entropy method trains its
  // predictor on whitespace targets (0 disables).
  double entropy_warm_start = 0.05;
  // Validation windows during training.
  std::size_t val_window = 512;
  std::size_t val_step = 128;
  std::size_t val_windows = 64;

  // 4000 warmup over 200000 steps on 2048-character chunks.
  static OptimConfig paper();

  void validate() const;
  std::string serialize() const;
  bool set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();
  std::size_t validation_interval() const;

  bool operator==(const OptimConfig&) const = default;
};

// Linear warmup to lr, then one cosine half-cycle to 0 at total_steps.
double lr_at(std::size_t step, const OptimConfig& cfg);

// Scales every gradient by clip / norm when the global norm exceeds clip.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ad::ParameterSet<T>& params, double clip);

template <typename T>
class Adam {
 public:
  Adam(const ad::ParameterSet<T>& params, double beta1, double beta2, double eps);

  void step(ad::ParameterSet<T>& params, double lr);
  std::size_t steps() const { return t_; }
  const std::vector<Array<T>>& first_moments() const { return m_; }
  const std::vector<Array<T>>& second_moments() const { return v_; }

  void store(hourglass::Checkpoint& ckpt, const ad::ParameterSet<T>& params) const;
  void restore(const hourglass::Checkpoint& ckpt, const ad::ParameterSet<T>& params, std::size_t steps);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Array<T>> m_, v_;
};

struct TrainData {
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> valid;
  // Unigram teacher boundaries aligned with `train` (unigram method only).
  std::vector<std::uint8_t> train_gold;
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double loss_total = 0;
  double loss_lm_bits = 0;
  double loss_aux = 0;
  double sf = 1;
  double grad_norm = 0;
  double wall_ms = 0;
};

// Header of metrics.csv.
inline constexpr const char* kMetricsHeader = "step,lr,loss_total,loss_lm_bits,loss_aux,sf,grad_norm,wall_ms";

struct ValidationRecord {
  std::size_t step = 0;
  double bpc = 0;
  double sf = 1;
};

struct TrainResult {
  std::size_t steps = 0;
  std::vector<ValidationRecord> validations;
  ValidationRecord best;
  StepMetrics last;
  double wall_seconds = 0;
};

// Non-finite loss; the message carries b_hat statistics.
class DivergedError : public InternalError {
 public:
  using InternalError::InternalError;
};

// Owns one run directory: metrics.csv and checkpoints/{last,best}.ckpt.
class Trainer {
 public:
  // Missing artifacts (empty streams, unigram teacher) raise DataError.
  Trainer(const hourglass::ModelConfig& model_cfg, const OptimConfig& optim, TrainData data,
          std::filesystem::path run_dir);

  StepMetrics step();
  evaluation::EvalReport validate() const;
  // Steps until total_steps, validating and checkpointing on schedule.
  // `on_log` sees every logged row.
  TrainResult run(const std::function<void(const StepMetrics&)>& on_log = {});

  void save(const std::filesystem::path& path) const;
  // Restores parameters, optimizer and RNG state, and the step counter.
  void resume(const std::filesystem::path& path);

  const hourglass::Model<float>& model() const { return model_; }
  hourglass::Model<float>& model() { return model_; }
  std::size_t steps_done() const { return step_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

 private:
  struct Batch {
    std::vector<std::int32_t> inputs, targets;
    std::vector<std::uint8_t> gold;
  };
  Batch next_batch();
  const std::vector<corpus::Chunk>& epoch_chunks(const std::vector<std::int32_t>& stream, std::uint64_t epoch,
                                                 std::vector<corpus::Chunk>& cache, std::uint64_t& cached) const;
  void append_metrics(const StepMetrics& m) const;

  hourglass::ModelConfig model_cfg_;
  OptimConfig optim_;
  TrainData data_;
  std::vector<std::int32_t> gold_stream_;
  std::filesystem::path run_dir_;
  hourglass::Model<float> model_;
  Adam<float> adam_;
  ad::Rng rng_;
  std::size_t step_ = 0;
  std::vector<ValidationRecord> validations_;
  std::optional<ValidationRecord> best_;
  std::size_t chunks_per_epoch_ = 0;
  mutable std::vector<corpus::Chunk> chunks_, gold_chunks_;
  mutable std::uint64_t chunk_epoch_ = ~0ull, gold_epoch_ = ~0ull;
};

}  // namespace dpt::trainer
