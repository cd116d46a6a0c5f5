#include "dpt/boundary/boundary.hpp"

#include <algorithm>
#include <cmath>

#include "dpt/error.hpp"

namespace dpt::boundary {

using namespace dpt::ad;

template <typename T>
Predictor<T> make_predictor(ParameterSet<T>& params, const std::string& prefix, std::size_t d,
                            std::size_t hidden, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  auto init = [&](Shape s) {
    Array<T> a(std::move(s));
    for (auto& v : a.values()) v = static_cast<T>(n(rng));
    return a;
  };
  Predictor<T> p;
  p.w1 = params.add(prefix + ".w1", init({d, hidden}));
  p.b1 = params.add(prefix + ".b1", Array<T>({hidden}));
  p.w2 = params.add(prefix + ".w2", init({hidden, 1}));
  p.b2 = params.add(prefix + ".b2", Array<T>({1}, T(-2)));
  return p;
}

template <typename T>
Var<T> predict_probs(const Var<T>& h, const Predictor<T>& p) {
  if (h.shape().size() != 3) throw ConfigError("predict_probs expects [B, L, d], got " + shape_str(h.shape()));
  auto z = linear(gelu(linear(h, p.w1, p.b1)), p.w2, p.b2);
  auto probs = sigmoid(reshape(z, {h.dim(0), h.dim(1)}));
  return clamp(probs, T(kProbClamp), T(1 - kProbClamp));
}

template <typename T>
Var<T> gumbel_sigmoid(const Var<T>& b_hat, const Array<T>& u, T tau) {
  if (!(tau > 0)) throw ConfigError("gumbel temperature must be positive");
  if (u.shape() != b_hat.shape()) {
    throw ConfigError("gumbel noise shape " + shape_str(u.shape()) + " vs " + shape_str(b_hat.shape()));
  }
  const T lo = T(kProbClamp), hi = T(1 - kProbClamp);
  auto b = clamp(b_hat, lo, hi);
  Array<T> noise(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T uc = std::min(hi, std::max(lo, u[i]));
    noise[i] = std::log(uc) - std::log1p(-uc);
  }
  auto logit = sub(log(b), log(add_scalar(scale(b, T(-1)), T(1))));
  return sigmoid(scale(add(logit, Var<T>::constant(std::move(noise))), T(1) / tau));
}

template <typename T>
Array<T> uniform_noise(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Array<T> a(shape);
  for (auto& v : a.values()) v = static_cast<T>(u(rng));
  return a;
}

template <typename T>
Var<T> harden(const Var<T>& v) {
  Array<T> hard(v.shape());
  for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = v.value()[i] >= T(0.5) ? T(1) : T(0);
  return straight_through(v, std::move(hard));
}

double entropy_nats(std::span<const double> p) {
  double mass = 0, h = 0;
  for (double x : p) {
    if (x < 0) throw DataError("probability vector has a negative entry");
    mass += x;
    if (x > 0) h -= x * std::log(x);
  }
  if (std::fabs(mass - 1) > 1e-4) throw DataError("probability vector sums to " + std::to_string(mass));
  return h;
}

double entropy_bits(std::span<const double> p) { return entropy_nats(p) / std::log(2.0); }

template <typename T>
std::vector<double> entropy_from_logits(const Array<T>& logits) {
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.size() / v;
  std::vector<double> out(rows);
  std::vector<double> p(v);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.data() + r * v;
    double mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(static_cast<double>(x[j]) - mx);
      z += p[j];
    }
    for (auto& q : p) q /= z;
    out[r] = entropy_nats(p);
  }
  return out;
}

std::vector<std::uint8_t> spike_boundaries(std::span<const double> h, std::size_t k) {
  if (k == 0) throw UsageError("entropy spike window must be >= 1");
  std::vector<std::uint8_t> b(h.size(), 0);
  for (std::size_t t = 1; t < h.size(); ++t) {
    bool spike = true;
    for (std::size_t i = t > k ? t - k : 0; i < t && spike; ++i) spike = h[t] > h[i];
    b[t] = spike;
  }
  return b;
}

template <typename T>
Var<T> bce_loss(const Var<T>& b_hat, std::span<const std::uint8_t> gold) {
  if (gold.size() != b_hat.size()) {
    throw UsageError("bce: " + std::to_string(gold.size()) + " labels for " + std::to_string(b_hat.size()) +
                     " predictions");
  }
  Array<T> g(b_hat.shape());
  for (std::size_t i = 0; i < gold.size(); ++i) g[i] = gold[i] ? T(1) : T(0);
  Array<T> one_minus_g(b_hat.shape());
  for (std::size_t i = 0; i < gold.size(); ++i) one_minus_g[i] = T(1) - g[i];
  auto p = clamp(b_hat, T(kProbClamp), T(1 - kProbClamp));
  auto pos = mul(log(p), Var<T>::constant(std::move(g)));
  auto neg = mul(log(add_scalar(scale(p, T(-1)), T(1))), Var<T>::constant(std::move(one_minus_g)));
  return scale(mean(add(pos, neg)), T(-1));
}

double binomial_log_prior(double l, double k, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("boundary prior alpha must be in (0, 1)");
  if (k < 0 || k > l) throw ConfigError("boundary count outside [0, l]");
  return std::lgamma(l + 1) - std::lgamma(k + 1) - std::lgamma(l - k + 1) + k * std::log(alpha) +
         (l - k) * std::log1p(-alpha);
}

template <typename T>
Var<T> binomial_prior_loss(const Var<T>& b, T alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("boundary prior alpha must be in (0, 1)");
  if (b.shape().size() != 2) throw ConfigError("binomial prior expects [B, L], got " + shape_str(b.shape()));
  const T l = static_cast<T>(b.dim(1));
  auto k = sum_axis(b, 1);
  auto rest = add_scalar(scale(k, T(-1)), l);  // l - k
  auto log_binom = scale(add(lgamma(add_scalar(k, T(1))), lgamma(add_scalar(rest, T(1)))), T(-1));
  auto log_p = add(add(log_binom, scale(k, static_cast<T>(std::log(double(alpha))))),
                   scale(rest, static_cast<T>(std::log1p(-double(alpha)))));
  log_p = add_scalar(log_p, static_cast<T>(std::lgamma(double(l) + 1)));
  return scale(mean(log_p), T(-1) / l);
}

#define DPT_INSTANTIATE_BOUNDARY(T)                                                                   \
  template Predictor<T> make_predictor<T>(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, \
                                          Rng&);                                                      \
  template Var<T> predict_probs<T>(const Var<T>&, const Predictor<T>&);                              \
  template Var<T> gumbel_sigmoid<T>(const Var<T>&, const Array<T>&, T);                              \
  template Array<T> uniform_noise<T>(const Shape&, Rng&);                                            \
  template Var<T> harden<T>(const Var<T>&);                                                          \
  template std::vector<double> entropy_from_logits<T>(const Array<T>&);                              \
  template Var<T> bce_loss<T>(const Var<T>&, std::span<const std::uint8_t>);                         \
  template Var<T> binomial_prior_loss<T>(const Var<T>&, T);

DPT_INSTANTIATE_BOUNDARY(float)
DPT_INSTANTIATE_BOUNDARY(double)

}  // namespace dpt::boundary
