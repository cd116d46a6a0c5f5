#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dpt/error.hpp"
#include "dpt/hourglass/checkpoint.hpp"
#include "dpt/hourglass/model.hpp"
#include "dpt/numerics/grad_check.hpp"
#include "dpt/text_io.hpp"

using namespace dpt;
using namespace dpt::hourglass;

namespace {

ModelConfig small(Method m, std::size_t d = 32) {
  ModelConfig c;
  c.d = d;
  c.ff = 2 * d;
  c.heads = 2;
  c.method = m;
  return c;
}

std::vector<std::int32_t> random_tokens(std::size_t n, std::mt19937_64& rng, std::int32_t vocab = 27) {
  std::uniform_int_distribution<std::int32_t> u(0, vocab - 1);
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = u(rng);
  return t;
}

std::vector<float> vals(const Array<float>& a) { return {a.values().begin(), a.values().end()}; }

// Closed-form scalar count of one attention + FF layer.
std::size_t layer_count(std::size_t d, std::size_t ff) { return 5 * d * d + 2 * d * ff + ff + 7 * d; }

const Method kAll[] = {Method::kVanilla, Method::kFixed,   Method::kGumbel,
                       Method::kEntropy, Method::kUnigram, Method::kWhitespace};

}  // namespace

TEST(ModelConfigTest, SerializeParseRoundTrip) {
  ModelConfig c = small(Method::kGumbel);
  c.alpha = 0.37;
  c.pooling = Pooling::kSubsample;
  c.whitespace_ids = {0, 3};
  EXPECT_EQ(ModelConfig::parse(c.serialize()), c);
}

TEST(ModelConfigTest, RejectsUnknownKeyAndBadValues) {
  EXPECT_THROW(ModelConfig::parse("d = 16\nwidth = 3\n"), ConfigError);
  ModelConfig c;
  c.heads = 3;  // 128 % 3 != 0
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_method("bpe"), ConfigError);
  EXPECT_EQ(parse_method("whitespace"), Method::kWhitespace);
  EXPECT_EQ(method_name(Method::kWhitespace), "whitespaces");
}

TEST(ModelTest, ForwardShapesAndVanillaShortening) {
  Model<float> m(small(Method::kVanilla), 1);
  std::mt19937_64 rng(0);
  const auto tokens = random_tokens(2 * 10, rng);
  const auto r = m.forward(tokens, 2, 10, {});
  EXPECT_EQ(r.logits.shape(), (Shape{2, 10, 27}));
  EXPECT_DOUBLE_EQ(r.sf, 1.0);
  EXPECT_FALSE(r.b_hat.defined());
}

TEST(ModelTest, WhitespaceGroupsFollowSpaces) {
  Model<float> m(small(Method::kWhitespace), 1);
  const std::vector<std::int32_t> tokens = {1, 0, 2};  // "a b"
  const auto r = m.forward(tokens, 1, 3, {});
  EXPECT_EQ(r.bits, (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_EQ(r.map.groups[0], 2u);
  EXPECT_DOUBLE_EQ(r.sf, 1.5);
}

TEST(ModelTest, ZeroWeightsGiveUniformCrossEntropy) {
  Model<float> m(small(Method::kFixed), 1);
  m.params().get("out.w").var.mutable_value().fill(0);
  std::mt19937_64 rng(1);
  const auto tokens = random_tokens(12, rng);
  const auto r = m.forward(tokens, 1, 12, {});
  const auto loss = m.loss(r, tokens, {});
  EXPECT_NEAR(loss.lm_nats, std::log(27.0), 1e-5);
  EXPECT_NEAR(loss.total.item(), std::log(27.0), 1e-5);
}

TEST(ModelTest, FixedOneEqualsVanillaWithSharedWeights) {
  auto fc = small(Method::kFixed);
  fc.fixed_k = 1;
  Model<float> vanilla(small(Method::kVanilla), 5);
  Model<float> fixed(fc, 9);
  for (auto& p : fixed.params().items()) {
    if (p.name == "null") {
      p.var.mutable_value().fill(0);
      continue;
    }
    p.var.mutable_value() = vanilla.params().get(p.name).var.value();
  }
  std::mt19937_64 rng(2);
  const auto tokens = random_tokens(3 * 16, rng);
  const auto a = vanilla.forward(tokens, 3, 16, {});
  const auto b = fixed.forward(tokens, 3, 16, {});
  EXPECT_EQ(vals(a.logits.value()), vals(b.logits.value()));
}

TEST(ModelTest, ParameterCountMatchesClosedForm) {
  const ModelConfig p = ModelConfig::paper();
  const std::size_t layers = p.n1 + p.n2 + p.n3;
  const std::size_t base = layers * layer_count(p.d, p.ff) + 2 * p.vocab * p.d + p.vocab;
  auto v = p;
  v.method = Method::kVanilla;
  EXPECT_EQ(parameter_count(v), base);
  auto f = p;
  f.method = Method::kFixed;
  EXPECT_EQ(parameter_count(f), base + p.d);
  auto g = p;
  g.method = Method::kGumbel;
  const std::size_t predictor = p.d * p.ff + p.ff + p.ff + 1;
  EXPECT_EQ(parameter_count(g), base + p.d + predictor);
}

// Logits at positions <= t never depend on tokens after t.
TEST(ModelTest, PrefixLogitsIgnoreSuffix) {
  std::mt19937_64 rng(3);
  for (Method method : kAll) {
    for (Pooling pooling : {Pooling::kMean, Pooling::kSubsample}) {
      auto cfg = small(method);
      cfg.pooling = pooling;
      cfg.fixed_k = 3;
      cfg.whitespace_ids = {0, 5};
      Model<float> m(cfg, 11);
      for (int trial = 0; trial < 6; ++trial) {
        const std::size_t L = 8 + rng() % 24;
        const std::size_t t = rng() % L;
        auto a = random_tokens(L, rng, 6);
        auto b = a;
        auto tail = random_tokens(L, rng, 6);
        for (std::size_t i = t + 1; i < L; ++i) b[i] = tail[i];
        const auto ra = m.forward(a, 1, L, {});
        const auto rb = m.forward(b, 1, L, {});
        const std::size_t keep = (t + 1) * 27;
        const auto la = vals(ra.logits.value()), lb = vals(rb.logits.value());
        ASSERT_TRUE(std::equal(la.begin(), la.begin() + keep, lb.begin()))
            << method_name(method) << "/" << pooling_name(pooling) << " L=" << L << " t=" << t;
      }
    }
  }
}

TEST(ModelTest, TrainingForwardNeedsRng) {
  Model<float> m(small(Method::kGumbel), 1);
  const std::vector<std::int32_t> tokens(4, 1);
  ForwardOptions opts;
  opts.training = true;
  EXPECT_THROW(m.forward(tokens, 1, 4, opts), UsageError);
  EXPECT_THROW(m.forward(tokens, 2, 4, {}), UsageError);
}

TEST(ModelTest, AuxLossNeedsTeacherBoundaries) {
  Model<float> m(small(Method::kUnigram), 1);
  const std::vector<std::int32_t> tokens(4, 1);
  const auto r = m.forward(tokens, 1, 4, {});
  EXPECT_THROW(m.loss(r, tokens, {}), UsageError);
  const std::vector<std::uint8_t> gold = {0, 1, 0, 1};
  EXPECT_GT(m.loss(r, tokens, gold).aux, 0.0);
}

TEST(ModelTest, SoftModeGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (Method method : {Method::kGumbel, Method::kEntropy, Method::kUnigram}) {
    auto cfg = small(method, 16);
    cfg.dropout = 0;
    Model<double> m(cfg, 21);
    const std::size_t B = 2, L = 6;
    const auto tokens = random_tokens(B * L, rng);
    const auto targets = random_tokens(B * L, rng);
    std::vector<std::uint8_t> gold(B * L);
    for (auto& g : gold) g = rng() % 2;
    ForwardOptions opts;
    opts.soft_boundaries = true;
    auto f = [&] { return m.loss(m.forward(tokens, B, L, opts), targets, gold).total; };
    ad::GradCheckOptions go;
    go.samples = 60;
    go.seed = 7;
    const auto res = ad::grad_check(m.params(), f, go);
    EXPECT_GE(res.checked, 50u);
    EXPECT_LT(res.max_rel_error, 1e-3) << method_name(method) << " worst " << res.worst;
  }
}

TEST(EntropyTeacherTest, UniformLogitsHaveNoSpikes) {
  Array<float> logits({2, 5, 27});
  const auto b = entropy_teacher(logits, 2);
  EXPECT_EQ(b, std::vector<std::uint8_t>(10, 0));
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("dpt_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripRestoresLogits) {
  const auto cfg = small(Method::kGumbel);
  Model<float> a(cfg, 1);
  Checkpoint c;
  c.config_text = cfg.serialize();
  c.meta_text = "step = 3\n";
  store_params(c, a.params());
  save_checkpoint(dir_ / "m.ckpt", c);

  const Checkpoint back = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(back.meta_text, c.meta_text);
  EXPECT_NO_THROW(check_config(back, cfg));
  Model<float> b(cfg, 2);
  restore_params(back, b.params());
  const std::vector<std::int32_t> tokens = {1, 4, 0, 7, 2, 0, 3};
  EXPECT_EQ(vals(a.forward(tokens, 1, 7, {}).logits.value()), vals(b.forward(tokens, 1, 7, {}).logits.value()));
  EXPECT_FALSE(std::filesystem::exists(dir_ / "m.ckpt.tmp"));
}

TEST_F(CheckpointTest, RejectsMismatchAndCorruption) {
  auto cfg = small(Method::kFixed);
  Model<float> a(cfg, 1);
  Checkpoint c;
  c.config_text = cfg.serialize();
  store_params(c, a.params());
  save_checkpoint(dir_ / "m.ckpt", c);
  const Checkpoint back = load_checkpoint(dir_ / "m.ckpt");

  auto other = cfg;
  other.fixed_k = 4;
  try {
    check_config(back, other);
    FAIL() << "mismatch accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("fixed_k"), std::string::npos) << e.what();
  }
  Model<float> wide(small(Method::kFixed, 48), 1);
  EXPECT_THROW(restore_params(back, wide.params()), DataError);

  try {
    load_checkpoint(dir_ / "missing.ckpt");
    FAIL() << "missing file accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint not found"), std::string::npos);
  }
  const std::string bytes = read_file(dir_ / "m.ckpt");
  write_file(dir_ / "cut.ckpt", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(dir_ / "cut.ckpt"), DataError);
  write_file(dir_ / "junk.ckpt", "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir_ / "junk.ckpt"), DataError);
}
