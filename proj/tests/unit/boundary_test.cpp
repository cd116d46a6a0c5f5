#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dpt/boundary/boundary.hpp"
#include "dpt/error.hpp"
#include "dpt/numerics/grad_check.hpp"

using namespace dpt;
using namespace dpt::boundary;
using ad::Var;

namespace {

Var<double> vec(std::vector<double> v) {
  Array<double> a({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) a[i] = v[i];
  return Var<double>::leaf(std::move(a), true);
}

double gumbel_scalar(double b, double u, double tau) {
  Array<double> noise({1}, u);
  return gumbel_sigmoid(vec({b}), noise, tau).value()[0];
}

// Direct scan written from the rule, independent of the windowed loop.
std::vector<std::uint8_t> spike_oracle(const std::vector<double>& h, std::size_t k) {
  std::vector<std::uint8_t> b(h.size(), 0);
  for (std::size_t t = 0; t < h.size(); ++t) {
    int preds = 0, beaten = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (t - i > k) continue;
      ++preds;
      beaten += h[t] > h[i];
    }
    b[t] = preds > 0 && beaten == preds;
  }
  return b;
}

}  // namespace

TEST(Gumbel, Examples) {
  EXPECT_NEAR(gumbel_scalar(0.7, 0.5, 1.0), 0.7, 1e-6);
  EXPECT_NEAR(gumbel_scalar(0.5, 0.9, 1.0), 0.9, 1e-6);
  EXPECT_GT(gumbel_scalar(0.7, 0.51, 0.01), 0.999);
  for (double b : {0.01, 0.2, 0.5, 0.8, 0.99}) EXPECT_NEAR(gumbel_scalar(b, 0.5, 1.0), b, 1e-6);
  EXPECT_THROW(gumbel_scalar(0.5, 0.5, 0.0), ConfigError);
}

TEST(Gumbel, HardRateMatchesProbability) {
  Rng rng(17);
  const std::size_t n = 100000;
  for (double tau : {0.5, 1.0}) {
    for (double b : {0.2, 0.5, 0.8}) {
      Array<double> probs({n}, b);
      auto u = uniform_noise<double>({n}, rng);
      auto hard = harden(gumbel_sigmoid(Var<double>::constant(std::move(probs)), u, tau));
      double rate = 0;
      for (double x : hard.value().values()) rate += x;
      rate /= double(n);
      EXPECT_NEAR(rate, b, 0.01) << "tau=" << tau << " b=" << b;
    }
  }
}

TEST(Gumbel, GradientMatchesFiniteDifference) {
  ad::ParameterSet<double> params;
  Rng rng(3);
  Array<double> init({2, 6});
  for (auto& v : init.values()) v = std::uniform_real_distribution<double>(-2, 2)(rng);
  auto logits = params.add("logits", std::move(init));
  auto u = uniform_noise<double>({2, 6}, rng);
  auto res = grad_check(params, [&] { return sum(mul(gumbel_sigmoid(sigmoid(logits), u, 0.5), gumbel_sigmoid(sigmoid(logits), u, 0.5))); });
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(Harden, RoundingAndStraightThrough) {
  auto v = vec({0.49, 0.51, 0.5, 0.0, 1.0});
  auto h = harden(v);
  const std::vector<double> expect = {0, 1, 1, 0, 1};
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(h.value()[i], expect[i]);
  ad::backward(sum(h));
  for (double g : v.grad().values()) EXPECT_EQ(g, 1.0);
}

TEST(Entropy, Examples) {
  const std::vector<double> uniform4 = {0.25, 0.25, 0.25, 0.25};
  EXPECT_NEAR(entropy_bits(uniform4), 2.0, 1e-12);
  const std::vector<double> onehot = {0, 1, 0};
  EXPECT_EQ(entropy_bits(onehot), 0.0);
  const std::vector<double> mixed = {0.5, 0.25, 0.25};
  EXPECT_NEAR(entropy_bits(mixed), 1.5, 1e-12);
  const std::vector<double> bad = {0.5, 0.4};
  EXPECT_THROW(entropy_nats(bad), DataError);
  const std::vector<double> close = {0.5, 0.49995};
  EXPECT_NO_THROW(entropy_nats(close));
}

TEST(Entropy, FromLogits) {
  Array<double> logits({2, 4});
  for (std::size_t j = 0; j < 4; ++j) logits[4 + j] = j == 2 ? 50.0 : 0.0;
  auto h = entropy_from_logits(logits);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_NEAR(h[0], std::log(4.0), 1e-12);
  EXPECT_NEAR(h[1], 0.0, 1e-15);
}

TEST(Spike, Examples) {
  const std::vector<double> h = {1.0, 2.0, 1.5, 3.0, 0.5};
  EXPECT_EQ(spike_boundaries(h, 2), (std::vector<std::uint8_t>{0, 1, 0, 1, 0}));
  const std::vector<double> flat(9, 0.7);
  for (std::size_t k = 1; k <= 4; ++k)
    for (auto b : spike_boundaries(flat, k)) EXPECT_EQ(b, 0);
  std::vector<double> inc(9);
  for (std::size_t i = 0; i < inc.size(); ++i) inc[i] = 0.1 * double(i);
  for (std::size_t k = 1; k <= 4; ++k) {
    auto b = spike_boundaries(inc, k);
    EXPECT_EQ(b[0], 0);
    for (std::size_t t = 1; t < b.size(); ++t) EXPECT_EQ(b[t], 1);
  }
  EXPECT_THROW(spike_boundaries(h, 0), UsageError);
  EXPECT_TRUE(spike_boundaries(std::vector<double>{}, 2).empty());
}

TEST(Spike, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 30)(rng);
    std::vector<double> h(n);
    // Small integer levels so ties are frequent.
    for (auto& x : h) x = double(std::uniform_int_distribution<int>(0, 4)(rng));
    const std::size_t k = 1 + trial % 4;
    ASSERT_EQ(spike_boundaries(h, k), spike_oracle(h, k)) << "trial " << trial;
  }
}

TEST(Bce, Examples) {
  const std::vector<std::uint8_t> one = {1};
  EXPECT_NEAR(bce_loss(vec({0.5}), one).item(), std::log(2.0), 1e-12);
  const std::vector<std::uint8_t> gold = {1, 0, 1};
  EXPECT_NEAR(bce_loss(vec({1.0, 0.0, 1.0}), gold).item(), 1e-6, 1e-9);
  const std::vector<std::uint8_t> pair = {1, 0};
  EXPECT_NEAR(bce_loss(vec({0.9, 0.1}), pair).item(), -std::log(0.9), 1e-12);
  EXPECT_NEAR(bce_loss(vec({0.9, 0.1}), pair).item(), 0.1054, 1e-4);
  EXPECT_THROW(bce_loss(vec({0.5, 0.5}), one), UsageError);
}

TEST(Bce, Gradient) {
  ad::ParameterSet<double> params;
  auto logits = params.add("z", Array<double>({5}, 0.3));
  const std::vector<std::uint8_t> gold = {1, 0, 0, 1, 1};
  params.get("z").var.mutable_value()[1] = -1.2;
  params.get("z").var.mutable_value()[3] = 2.0;
  auto res = grad_check(params, [&] { return bce_loss(sigmoid(logits), gold); });
  EXPECT_LT(res.max_rel_error, 1e-7);
}

TEST(Binomial, Examples) {
  EXPECT_NEAR(binomial_log_prior(4, 2, 0.5), std::log(0.375), 1e-12);
  EXPECT_NEAR(binomial_log_prior(4, 2, 0.5), -0.9808, 1e-4);
  EXPECT_NEAR(binomial_log_prior(10, 0, 1e-3), 10 * std::log(1 - 1e-3), 1e-12);
  // C(10,2) 0.2^2 0.8^8 by direct multiplication.
  const double direct = 45 * 0.04 * std::pow(0.8, 8);
  EXPECT_NEAR(binomial_log_prior(10, 2, 0.2), std::log(direct), 1e-12);
  EXPECT_NEAR(binomial_log_prior(10, 2, 0.2), -1.1973, 1e-4);
  EXPECT_THROW(binomial_log_prior(4, 5, 0.5), ConfigError);
  EXPECT_THROW(binomial_log_prior(4, 1, 1.0), ConfigError);
}

TEST(Binomial, MinimizedNearAlphaL) {
  int best = -1;
  double best_loss = INFINITY;
  for (int k = 0; k <= 100; ++k) {
    const double loss = -binomial_log_prior(100, k, 0.2) / 100;
    if (loss < best_loss) best_loss = loss, best = k;
  }
  EXPECT_GE(best, 19);
  EXPECT_LE(best, 21);
}

TEST(Binomial, LossMatchesScalarAndDifferentiates) {
  Array<double> b({2, 4});
  const double rows[2][4] = {{1, 0, 1, 0}, {0, 0, 0, 1}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) b[r * 4 + c] = rows[r][c];
  auto bv = Var<double>::leaf(b, true);
  auto loss = binomial_prior_loss(bv, 0.2);
  const double expect = -(binomial_log_prior(4, 2, 0.2) + binomial_log_prior(4, 1, 0.2)) / 2 / 4;
  EXPECT_NEAR(loss.item(), expect, 1e-12);

  // Gradient through soft relaxed counts.
  ad::ParameterSet<double> params;
  Rng rng(8);
  Array<double> z({3, 7});
  for (auto& v : z.values()) v = std::normal_distribution<double>(0, 1)(rng);
  auto zp = params.add("z", std::move(z));
  auto res = grad_check(params, [&] { return binomial_prior_loss(sigmoid(zp), 0.2); });
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(Predictor, ZeroWeightsGiveHalf) {
  ad::ParameterSet<double> params;
  Rng rng(1);
  auto p = make_predictor(params, "pred", 6, 6, rng);
  EXPECT_EQ(params.size(), 4u);
  EXPECT_NEAR(predict_probs(Var<double>::constant(Array<double>({1, 3, 6}, 0.4)), p).value()[0],
              1 / (1 + std::exp(2.0)), 1e-3);
  for (auto& prm : params.items()) prm.var.mutable_value().fill(0.0);
  Array<double> h({2, 3, 6});
  for (auto& x : h.values()) x = std::normal_distribution<double>(0, 1)(rng);
  auto probs = predict_probs(Var<double>::constant(h), p);
  ASSERT_EQ(probs.shape(), (Shape{2, 3}));
  for (double x : probs.value().values()) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(Predictor, PointwiseAndInRange) {
  ad::ParameterSet<double> params;
  Rng rng(2);
  auto p = make_predictor(params, "pred", 8, 8, rng);
  for (auto& prm : params.items())
    for (auto& x : prm.var.mutable_value().values()) x = std::normal_distribution<double>(0, 1)(rng);
  Array<double> h({1, 5, 8});
  for (auto& x : h.values()) x = std::normal_distribution<double>(0, 2)(rng);
  auto base = predict_probs(Var<double>::constant(h), p).value();
  // Swap positions 0 and 4; the others keep their outputs.
  Array<double> swapped = h;
  for (std::size_t j = 0; j < 8; ++j) std::swap(swapped[j], swapped[4 * 8 + j]);
  auto perm = predict_probs(Var<double>::constant(swapped), p).value();
  EXPECT_EQ(perm[0], base[4]);
  EXPECT_EQ(perm[4], base[0]);
  for (std::size_t t = 1; t < 4; ++t) EXPECT_EQ(perm[t], base[t]);
  for (double x : base.values()) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}
