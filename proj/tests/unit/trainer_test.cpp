#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"
#include "dpt/trainer/trainer.hpp"

using namespace dpt;
using namespace dpt::trainer;
namespace fs = std::filesystem;

namespace {

// Random words of letters 1..26 separated by single spaces (id 0).
std::vector<std::int32_t> word_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 7), letter(1, 26);
  std::vector<std::int32_t> t;
  while (t.size() < n) {
    for (int i = len(rng); i > 0 && t.size() < n; --i) t.push_back(letter(rng));
    if (t.size() < n) t.push_back(0);
  }
  return t;
}

hourglass::ModelConfig tiny(hourglass::Method m) {
  hourglass::ModelConfig c;
  c.d = 16;
  c.ff = 32;
  c.heads = 2;
  c.method = m;
  return c;
}

OptimConfig short_run(std::size_t steps) {
  OptimConfig o;
  o.total_steps = steps;
  o.warmup_steps = 2;
  o.batch = 2;
  o.chunk_len = 24;
  o.log_every = 1;
  o.val_every = steps;
  o.val_window = 32;
  o.val_step = 16;
  o.val_windows = 2;
  o.seed = 5;
  return o;
}

TrainData data() {
  TrainData d;
  d.train = word_stream(3000, 1);
  d.valid = word_stream(400, 2);
  return d;
}

std::vector<float> flat_params(const hourglass::Model<float>& m) {
  std::vector<float> out;
  for (const auto& p : m.params().items()) {
    const auto v = p.var.value().values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpt_trainer_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(LearningRateTest, WarmupThenCosineToZero) {
  OptimConfig o;
  o.lr = 1.0;
  o.warmup_steps = 10;
  o.total_steps = 110;
  EXPECT_DOUBLE_EQ(lr_at(1, o), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(5, o), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(10, o), 1.0);
  EXPECT_NEAR(lr_at(60, o), 0.5, 1e-12);
  EXPECT_NEAR(lr_at(110, o), 0.0, 1e-12);
  EXPECT_THROW(lr_at(0, o), UsageError);
  EXPECT_THROW(lr_at(111, o), UsageError);
}

TEST(OptimConfigTest, DefaultsRoundTripAndPaperSchedule) {
  const OptimConfig d;
  EXPECT_DOUBLE_EQ(d.lr, 2.5e-4);
  EXPECT_DOUBLE_EQ(d.clip, 0.25);
  EXPECT_EQ(d.total_steps, 2000u);
  EXPECT_EQ(d.warmup_steps, 100u);
  EXPECT_EQ(d.validation_interval(), 100u);  // every 5%
  OptimConfig r;
  for (const auto& [k, v] : parse_key_values(d.serialize(), "test")) ASSERT_TRUE(r.set(k, v)) << k;
  EXPECT_EQ(r, d);
  EXPECT_FALSE(r.set("method", "fixed"));
  EXPECT_THROW(r.set("lr", "fast"), ConfigError);
  const auto p = OptimConfig::paper();
  EXPECT_EQ(p.warmup_steps, 4000u);
  EXPECT_EQ(p.total_steps, 200000u);
  EXPECT_EQ(p.chunk_len, 2048u);
}

TEST(ClipTest, ScalesGlobalNormToClip) {
  ad::ParameterSet<double> ps;
  ps.add("a", Array<double>({2}, {0.0, 0.0}));
  ps.add("b", Array<double>({1}, {0.0}));
  ps.zero_grad();
  ps.get("a").var.grad_buffer().values()[0] = 1.5;  // global norm sqrt(1.5^2 + 2^2) = 2.5
  ps.get("b").var.grad_buffer().values()[0] = 2.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 0.25), 2.5);
  EXPECT_NEAR(ps.get("a").var.grad_buffer().values()[0], 0.15, 1e-15);
  EXPECT_NEAR(ps.get("b").var.grad_buffer().values()[0], 0.2, 1e-15);
  // Below the threshold nothing changes.
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 0.25, 1e-15);
  EXPECT_NEAR(ps.get("b").var.grad_buffer().values()[0], 0.2, 1e-15);
}

TEST(AdamTest, MatchesHandComputedUpdates) {
  ad::ParameterSet<double> ps;
  ps.add("w", Array<double>({1}, {1.0}));
  Adam<double> adam(ps, 0.9, 0.999, 1e-8);
  double w = 1, m = 0, v = 0;
  const double grads[] = {0.5, -1.0, 2.0};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    ps.zero_grad();
    ps.get("w").var.grad_buffer().values()[0] = g;
    adam.step(ps, 0.1);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(ps.get("w").var.value().values()[0], w, 1e-12) << "step " << t;
  }
  EXPECT_EQ(adam.steps(), 3u);
}

TEST_F(TrainerTest, MissingArtifactsRaiseDataError) {
  TrainData empty;
  EXPECT_THROW(Trainer(tiny(hourglass::Method::kVanilla), short_run(2), empty, dir_), DataError);
  EXPECT_THROW(Trainer(tiny(hourglass::Method::kUnigram), short_run(2), data(), dir_), DataError);
}

TEST_F(TrainerTest, SameSeedGivesIdenticalTraining) {
  for (auto m : {hourglass::Method::kGumbel, hourglass::Method::kEntropy}) {
    Trainer a(tiny(m), short_run(4), data(), dir_ / "a");
    Trainer b(tiny(m), short_run(4), data(), dir_ / "b");
    for (int s = 0; s < 4; ++s) {
      const auto ma = a.step();
      const auto mb = b.step();
      EXPECT_EQ(ma.loss_total, mb.loss_total);
      EXPECT_EQ(ma.grad_norm, mb.grad_norm);
      EXPECT_TRUE(std::isfinite(ma.loss_total));
    }
    EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));
  }
}

TEST_F(TrainerTest, ResumeIsBitExact) {
  const auto cfg = tiny(hourglass::Method::kGumbel);
  Trainer a(cfg, short_run(6), data(), dir_ / "a");
  for (int s = 0; s < 3; ++s) a.step();
  a.save(dir_ / "mid.ckpt");
  std::vector<double> tail_a;
  for (int s = 0; s < 3; ++s) tail_a.push_back(a.step().loss_total);

  Trainer b(cfg, short_run(6), data(), dir_ / "b");
  b.resume(dir_ / "mid.ckpt");
  EXPECT_EQ(b.steps_done(), 3u);
  std::vector<double> tail_b;
  for (int s = 0; s < 3; ++s) tail_b.push_back(b.step().loss_total);
  EXPECT_EQ(tail_a, tail_b);
  EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));

  auto other = cfg;
  other.alpha = 0.3;
  Trainer c(other, short_run(6), data(), dir_ / "c");
  EXPECT_THROW(c.resume(dir_ / "mid.ckpt"), DataError);
}

TEST_F(TrainerTest, RunWritesMetricsAndCheckpoints) {
  Trainer t(tiny(hourglass::Method::kFixed), short_run(4), data(), dir_);
  std::size_t logged = 0;
  const auto r = t.run([&](const StepMetrics&) { ++logged; });
  EXPECT_EQ(logged, 4u);
  EXPECT_EQ(r.steps, 4u);
  ASSERT_FALSE(r.validations.empty());
  EXPECT_EQ(r.validations.back().step, 4u);
  EXPECT_NEAR(r.validations.back().sf, 2.0, 0.1);
  EXPECT_TRUE(fs::exists(dir_ / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "checkpoints" / "best.ckpt"));
  const auto csv = read_file(dir_ / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

namespace {

// Lines of metrics.csv without the wall_ms column.
std::vector<std::string> rows_without_time(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < csv.size()) {
    const auto end = csv.find('\n', start);
    const std::string line = csv.substr(start, end - start);
    out.push_back(line.substr(0, line.rfind(',')));
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST_F(TrainerTest, ResumedRunRewritesRowsPastTheCheckpoint) {
  const auto cfg = tiny(hourglass::Method::kGumbel);
  auto o = short_run(6);
  o.val_every = 3;
  {
    Trainer t(cfg, o, data(), dir_ / "x");
    for (int s = 0; s < 3; ++s) t.step();
    t.save(dir_ / "mid.ckpt");
  }
  Trainer full(cfg, o, data(), dir_);
  full.run();
  const auto once = rows_without_time(read_file(dir_ / "metrics.csv"));
  ASSERT_EQ(once.size(), 7u);

  Trainer again(cfg, o, data(), dir_);
  again.resume(dir_ / "mid.ckpt");
  again.run();
  EXPECT_EQ(rows_without_time(read_file(dir_ / "metrics.csv")), once);
  EXPECT_EQ(flat_params(again.model()), flat_params(full.model()));
}

TEST_F(TrainerTest, ValidationUsesEvalModeAndIsRepeatable) {
  Trainer t(tiny(hourglass::Method::kGumbel), short_run(4), data(), dir_);
  const auto a = t.validate();
  const auto b = t.validate();
  EXPECT_EQ(a.bpc, b.bpc);
  EXPECT_GT(a.bpc, 0);
  EXPECT_LT(a.bpc, 8);
}
