#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpt/hourglass/model.hpp"

namespace dpt::evaluation {

struct EvalOptions {
  std::size_t window = 2048;
  std::size_t step = 512;
  // Score only the last `step` predictions of every window, including the
  // first one.
  bool strict = false;
  // Evaluate at most this many windows from the start (0: all).
  std::size_t max_windows = 0;
};

struct EvalReport {
  double bpc = 0;
  double sf = 1;  // total window positions / total segments
  std::vector<double> window_bits;  // mean bits over each window's scored span
  std::size_t scored = 0;
  std::uint64_t seed = 0;
  std::string fingerprint;
};

// Mean of per-token log2 losses.
double mean_bits(std::span<const double> log2_losses);

// Predicts tokens[i + 1] from tokens[0..i] over sliding windows, in eval mode
// (no dropout or noise, rounded boundaries).
template <typename T>
EvalReport bpc(const hourglass::Model<T>& model, std::span<const std::int32_t> tokens, const EvalOptions& opts = {});

// Stable hex digest of a config text.
std::string fingerprint(std::string_view text);

struct EntropyTrace {
  std::vector<double> bits;  // predictive entropy for the token after each position
  std::vector<std::uint8_t> spikes;
};

// One eval-mode forward over `tokens` (at most one window).
template <typename T>
EntropyTrace entropy_trace(const hourglass::Model<T>& model, std::span<const std::int32_t> tokens, std::size_t k);

// Columns: position,char,entropy_bits,spike
void write_entropy_trace_csv(const std::filesystem::path& path, const EntropyTrace& trace, std::u32string_view text);

// Fraction of spikes at a whitespace position or next to one.
double spikes_near_whitespace(const EntropyTrace& trace, std::u32string_view text);

struct TTest {
  double t = 0;
  double p = 1;
  double df = 0;
  bool degenerate = false;  // zero variance of the differences
};

// Paired two-sided Student's t-test on the differences b[i] - a[i], so t > 0
// when b is larger.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct ResultRow {
  std::string method;
  std::string setting;  // method hyper-parameter, e.g. "k=2", "alpha=0.2", "vocab=10000"
  double bpc = 0;
  double sf = 1;
  std::uint64_t seed = 0;

  bool operator==(const ResultRow&) const = default;
};

// results.csv: method,setting,bpc,sf,seed
void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

// Scatter of bpc against sf with one colour per method.
std::string pareto_svg(std::span<const ResultRow> rows);

// Writes results.csv and pareto.svg into `dir`. Unwritable dir: IoError.
void emit_report(std::span<const ResultRow> rows, const std::filesystem::path& dir);

struct AblationRow {
  std::string method;
  double mean_bpc = 0, mean_sf = 1;
  double subsample_bpc = 0, subsample_sf = 1;
};

// Two-column table (average pooling, sub-sampling) in Markdown.
std::string ablation_table(std::span<const AblationRow> rows);
// ablation.csv: method,pooling,bpc,sf
void write_ablation(std::span<const AblationRow> rows, const std::filesystem::path& dir);

}  // namespace dpt::evaluation
