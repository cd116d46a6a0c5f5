#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpt/hourglass/config.hpp"

namespace dpt::evaluation {

struct BenchOptions {
  std::size_t length = 2048;
  std::size_t batch = 1;
  std::size_t warmup = 5;
  std::size_t steps = 20;
  std::uint64_t seed = 0;
  // Measure in a forked child so peak memory covers this setting alone.
  bool isolate = true;
};

struct BenchRecord {
  std::size_t sf_setting = 1;  // fixed pooling factor k
  double sf = 1;               // measured shortening factor
  double mean_ms = 0;
  double stddev_ms = 0;
  std::size_t peak_rss_kb = 0;
};

// Peak resident set of this process (VmHWM).
std::size_t peak_rss_kb();
// Resets the peak to the current resident set where the kernel allows it.
void reset_peak_rss();

// Mean wall time of full training steps (forward, backward, clipping,
// Adam) with fixed pooling of factor `k` on `tokens`.
BenchRecord bench_setting(const hourglass::ModelConfig& base, std::size_t k, std::span<const std::int32_t> tokens,
                          const BenchOptions& opts);

// bench.csv: sf_setting,sf,run,mean_ms,stddev_ms,peak_rss_kb
void write_bench_csv(const std::filesystem::path& path, std::span<const BenchRecord> records,
                     std::span<const std::size_t> runs);

}  // namespace dpt::evaluation
