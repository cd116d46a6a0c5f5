#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dpt/boundary/boundary.hpp"
#include "dpt/numerics/gemm.hpp"
#include "dpt/pooling/pooling.hpp"

using namespace dpt;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  std::vector<float> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

// Square float GEMM; counters report GFLOP/s.
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_floats(n * n, 1), b = random_floats(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    blas::gemm(blas::Op::kNone, blas::Op::kNone, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                                                  benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(128)->Arg(512)->Arg(1024);

// Mean pooling of [1, L, 128] with about one boundary in five.
void BM_MeanPool(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 128;
  Array<float> h({1, L, d}, random_floats(L * d, 3));
  std::mt19937_64 rng(4);
  std::bernoulli_distribution fire(0.2);
  std::vector<std::uint8_t> b(L);
  for (auto& x : b) x = fire(rng);
  const auto map = pooling::build_pool_map(b, 1, L);
  const auto hv = ad::Var<float>::constant(h);
  for (auto _ : state) benchmark::DoNotOptimize(pooling::mean_pool(hv, map).value().data());
}
BENCHMARK(BM_MeanPool)->Arg(512)->Arg(2048);

void BM_SpikeRule(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  std::vector<double> h(L);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 4);
  for (auto& x : h) x = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(boundary::spike_boundaries(h, 2).data());
}
BENCHMARK(BM_SpikeRule)->Arg(2048);

}  // namespace

BENCHMARK_MAIN();
