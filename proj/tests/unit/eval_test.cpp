#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "dpt/error.hpp"
#include "dpt/evaluation/bench.hpp"
#include "dpt/evaluation/eval.hpp"
#include "dpt/text_io.hpp"

using namespace dpt;
using namespace dpt::evaluation;
namespace fs = std::filesystem;

namespace {

hourglass::ModelConfig small(hourglass::Method m) {
  hourglass::ModelConfig c;
  c.d = 16;
  c.ff = 32;
  c.heads = 2;
  c.method = m;
  return c;
}

std::vector<std::int32_t> random_tokens(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> u(0, 26);
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = u(rng);
  return t;
}

// Two-sided Student t tail in closed form for one and two degrees of freedom.
double p_df1(double t) { return 1 - 2 / std::numbers::pi * std::atan(std::abs(t)); }
double p_df2(double t) { return 1 - std::abs(t) / std::sqrt(t * t + 2); }

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpt_eval_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(MeanBitsTest, AveragesLosses) {
  const std::vector<double> x = {1.0, 2.0, 4.5};
  EXPECT_DOUBLE_EQ(mean_bits(x), 2.5);
}

TEST(BpcTest, UniformModelScoresLogTwoOfVocab) {
  hourglass::Model<float> m(small(hourglass::Method::kVanilla), 3);
  m.params().get("out.w").var.mutable_value().fill(0);
  m.params().get("out.b").var.mutable_value().fill(0);
  const auto tokens = random_tokens(300, 1);
  const auto r = bpc(m, tokens, {64, 16});
  EXPECT_NEAR(r.bpc, std::log2(27.0), 1e-5);
  EXPECT_EQ(r.scored, tokens.size() - 1);
  EXPECT_DOUBLE_EQ(r.sf, 1.0);
}

TEST(BpcTest, SingleWindowEqualsDirectLoss) {
  hourglass::Model<float> m(small(hourglass::Method::kFixed), 4);
  const auto tokens = random_tokens(41, 2);
  const auto r = bpc(m, tokens, {64, 16});
  const std::span<const std::int32_t> all(tokens);
  const auto fwd = m.forward(all.first(40), 1, 40, {});
  const auto loss = m.loss(fwd, all.subspan(1), {});
  EXPECT_NEAR(r.bpc, loss.lm_nats / std::log(2.0), 1e-5);
  EXPECT_EQ(r.scored, 40u);
  EXPECT_EQ(r.window_bits.size(), 1u);
}

TEST(BpcTest, StrictScoresOnlyWindowTails) {
  hourglass::Model<float> m(small(hourglass::Method::kVanilla), 5);
  const auto tokens = random_tokens(129, 3);  // 128 predictions
  const auto loose = bpc(m, tokens, {64, 16, false});
  const auto strict = bpc(m, tokens, {64, 16, true});
  EXPECT_EQ(loose.scored, 128u);
  EXPECT_EQ(strict.scored, 128u - 48u);  // the first window keeps only its last 16
  EXPECT_EQ(loose.window_bits.size(), strict.window_bits.size());
  const auto capped = bpc(m, tokens, {64, 16, false, 2});
  EXPECT_EQ(capped.window_bits.size(), 2u);
  EXPECT_EQ(capped.scored, 80u);
  EXPECT_EQ(loose.fingerprint, fingerprint(m.config().serialize()));
}

TEST(FingerprintTest, StableAndSensitive) {
  EXPECT_EQ(fingerprint("a = 1\n"), fingerprint("a = 1\n"));
  EXPECT_NE(fingerprint("a = 1\n"), fingerprint("a = 2\n"));
  EXPECT_EQ(fingerprint("x").size(), 16u);
}

TEST(EntropyTraceTest, SpikeOverlapCountsNeighbours) {
  EntropyTrace tr;
  tr.bits = {1, 2, 1, 2, 1, 2};
  tr.spikes = {0, 1, 0, 0, 1, 0};
  // Spike at 1 sits next to the space at 2; spike at 4 has none nearby.
  EXPECT_DOUBLE_EQ(spikes_near_whitespace(tr, U"ab cdef"), 0.5);
  tr.spikes.assign(6, 0);
  EXPECT_DOUBLE_EQ(spikes_near_whitespace(tr, U"ab cdef"), 0.0);
}

TEST_F(TempDir, EntropyTraceCsvHasOneRowPerPosition) {
  hourglass::Model<float> m(small(hourglass::Method::kEntropy), 6);
  const auto tokens = random_tokens(20, 4);
  const auto tr = entropy_trace(m, tokens, 2);
  ASSERT_EQ(tr.bits.size(), 20u);
  ASSERT_EQ(tr.spikes.size(), 20u);
  for (double b : tr.bits) {
    EXPECT_GE(b, 0);
    EXPECT_LE(b, std::log2(27.0) + 1e-6);
  }
  std::u32string text(20, U'a');
  text[3] = U' ';
  write_entropy_trace_csv(dir_ / "t.csv", tr, text);
  const auto csv = read_file(dir_ / "t.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "position,char,entropy_bits,spike");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  EXPECT_NE(csv.find("\n3,\\s,"), std::string::npos);
}

TEST(TTestTest, WorkedExample) {
  const std::vector<double> a = {1, 2, 3}, b = {2, 4, 6};
  const auto r = paired_t_test(a, b);
  EXPECT_NEAR(r.t, std::sqrt(12.0), 1e-9);  // differences b - a = [1, 2, 3]
  EXPECT_DOUBLE_EQ(r.df, 2);
  EXPECT_NEAR(r.p, p_df2(std::sqrt(12.0)), 1e-9);
  EXPECT_NEAR(r.p, 0.0742, 1e-4);
  EXPECT_FALSE(r.degenerate);
}

TEST(TTestTest, ClosedFormTailsForSmallSamples) {
  // Two pairs: df 1. Differences 1 and 3: mean 2, sd sqrt(2), t = 2.
  const std::vector<double> a = {1, 3}, zero = {0, 0};
  const auto r = paired_t_test(zero, a);
  EXPECT_NEAR(r.t, 2.0, 1e-12);
  EXPECT_NEAR(r.p, p_df1(2.0), 1e-9);
  const std::vector<double> c = {0.5, 1.5, -0.25}, z3 = {0, 0, 0};
  const auto s = paired_t_test(z3, c);
  EXPECT_NEAR(s.p, p_df2(s.t), 1e-9);
}

TEST(TTestTest, DegenerateAndInvalidInputs) {
  const std::vector<double> a = {1, 2, 3};
  const auto same = paired_t_test(a, a);
  EXPECT_TRUE(same.degenerate);
  EXPECT_DOUBLE_EQ(same.p, 1.0);
  const std::vector<double> shifted = {2, 3, 4};
  const auto constant = paired_t_test(shifted, a);
  EXPECT_TRUE(constant.degenerate);
  EXPECT_DOUBLE_EQ(constant.p, 0.0);
  EXPECT_TRUE(std::isinf(constant.t));
  EXPECT_LT(constant.t, 0);
  const std::vector<double> one = {1}, two = {1, 2};
  EXPECT_THROW(paired_t_test(one, one), UsageError);
  EXPECT_THROW(paired_t_test(a, two), UsageError);
}

TEST_F(TempDir, ResultsCsvRoundTrip) {
  const std::vector<ResultRow> rows = {{"fixed", "k=2", 1.2345678901234567, 2.0, 0},
                                       {"gumbel", "alpha=0.2;pooling=subsample", 1.4, 5.3, 7}};
  write_results_csv(dir_ / "r" / "results.csv", rows);
  const auto text = read_file(dir_ / "r" / "results.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "method,setting,bpc,sf,seed");
  EXPECT_EQ(read_results_csv(dir_ / "r" / "results.csv"), rows);
  const std::vector<ResultRow> bad = {{"a,b", "-", 1, 1, 0}};
  EXPECT_THROW(write_results_csv(dir_ / "bad.csv", bad), UsageError);
  EXPECT_THROW(read_results_csv(dir_ / "missing.csv"), Error);
}

TEST_F(TempDir, ReportWritesCsvAndEscapedSvg) {
  const std::vector<ResultRow> rows = {{"fixed", "k=2", 1.3, 2.0, 0},
                                       {"fixed", "k=4", 1.5, 4.0, 0},
                                       {"a<b&c", "-", 1.4, 3.0, 0}};
  emit_report(rows, dir_ / "rep");
  EXPECT_EQ(read_results_csv(dir_ / "rep" / "results.csv"), rows);
  const auto svg = read_file(dir_ / "rep" / "pareto.svg");
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b&amp;c"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
  // Balanced tags: every opening element is closed or self-closing.
  std::size_t open = 0, close = 0, self = 0;
  for (std::size_t i = 0; i + 1 < svg.size(); ++i) {
    if (svg[i] != '<') continue;
    if (svg[i + 1] == '/') {
      ++close;
    } else if (svg[i + 1] != '?') {
      const auto end = svg.find('>', i);
      if (svg[end - 1] == '/') ++self;
      else ++open;
    }
  }
  EXPECT_EQ(open, close);
  EXPECT_GT(self, 0u);
}

TEST_F(TempDir, AblationTableHasBothPoolingColumns) {
  const std::vector<AblationRow> rows = {{"fixed (k=2)", 1.31, 2.0, 1.35, 2.0}, {"entropy", 1.28, 3.1, 1.33, 3.0}};
  const auto md = ablation_table(rows);
  EXPECT_NE(md.find("AvgPooling BPC"), std::string::npos);
  EXPECT_NE(md.find("Subsampling BPC"), std::string::npos);
  EXPECT_NE(md.find("| entropy | 1.280 |"), std::string::npos);
  write_ablation(rows, dir_);
  const auto csv = read_file(dir_ / "ablation.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,pooling,bpc,sf");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST_F(TempDir, BenchCsvAndInProcessMeasurement) {
  auto cfg = small(hourglass::Method::kFixed);
  BenchOptions o;
  o.length = 32;
  o.warmup = 1;
  o.steps = 2;
  o.isolate = false;
  const auto tokens = random_tokens(200, 5);
  const auto r = bench_setting(cfg, 2, tokens, o);
  EXPECT_EQ(r.sf_setting, 2u);
  EXPECT_DOUBLE_EQ(r.sf, 2.0);
  EXPECT_GT(r.mean_ms, 0);
  EXPECT_GT(r.peak_rss_kb, 0u);
  o.isolate = true;
  const auto forked = bench_setting(cfg, 4, tokens, o);
  EXPECT_DOUBLE_EQ(forked.sf, 4.0);
  EXPECT_THROW(bench_setting(cfg, 2, std::span(tokens).first(10), o), Error);
  const std::vector<BenchRecord> recs = {r, forked};
  const std::vector<std::size_t> runs = {0, 0};
  write_bench_csv(dir_ / "bench.csv", recs, runs);
  const auto csv = read_file(dir_ / "bench.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sf_setting,sf,run,mean_ms,stddev_ms,peak_rss_kb");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
