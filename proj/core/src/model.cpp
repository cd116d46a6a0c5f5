#include "dpt/hourglass/model.hpp"

#include <algorithm>

#include "dpt/error.hpp"

namespace dpt::hourglass {

using namespace dpt::ad;
namespace pl = dpt::pooling;
namespace bd = dpt::boundary;

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.02);
  auto init = [&](Shape s) {
    Array<T> a(std::move(s));
    for (auto& x : a.values()) x = static_cast<T>(n(rng));
    return a;
  };
  const std::size_t d = cfg_.d;
  embed_ = params_.add("embed", init({cfg_.vocab, d}));
  auto build = [&](std::vector<LayerParams<T>>& block, const char* name, std::size_t layers) {
    for (std::size_t i = 0; i < layers; ++i) {
      block.push_back(make_layer(params_, std::string(name) + "." + std::to_string(i), d, cfg_.ff, cfg_.heads, rng));
    }
  };
  build(block1_, "block1", cfg_.n1);
  build(block2_, "block2", cfg_.n2);
  build(block3_, "block3", cfg_.n3);
  if (cfg_.method != Method::kVanilla) null_ = params_.add("null", init({d}));
  if (uses_predictor(cfg_.method)) predictor_ = bd::make_predictor(params_, "predictor", d, cfg_.ff, rng);
  out_w_ = params_.add("out.w", init({d, cfg_.vocab}));
  out_b_ = params_.add("out.b", Array<T>({cfg_.vocab}));
}

template <typename T>
Var<T> Model<T>::run_block(const std::vector<LayerParams<T>>& block, Var<T> x, std::span<const std::size_t> valid,
                           const ForwardOptions& opts) const {
  LayerContext ctx{cfg_.heads, cfg_.dropout, opts.training, opts.rng};
  for (const auto& layer : block) x = layer_forward(x, layer, valid, ctx);
  return x;
}

template <typename T>
ForwardResult<T> Model<T>::forward(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t length,
                                   const ForwardOptions& opts) const {
  if (length == 0 || batch == 0) throw UsageError("forward needs at least one token");
  if (tokens.size() != batch * length) throw UsageError("forward: token count does not match batch x length");
  if (opts.training && opts.rng == nullptr) throw UsageError("training forward needs an rng");
  const std::size_t B = batch, L = length, d = cfg_.d;

  ForwardResult<T> r;
  r.batch = B;
  r.length = L;
  auto x = embedding(embed_, tokens, {B, L});
  const std::vector<std::size_t> full(B, L);
  auto h = run_block(block1_, x, full, opts);

  const bool soft = opts.soft_boundaries && uses_predictor(cfg_.method);
  switch (cfg_.method) {
    case Method::kVanilla: r.map = pl::fixed_pool_map(B, L, 1); break;
    case Method::kFixed: r.map = pl::fixed_pool_map(B, L, cfg_.fixed_k); break;
    case Method::kWhitespace: {
      std::vector<std::uint8_t> bits(B * L);
      for (std::size_t i = 0; i < bits.size(); ++i) {
        bits[i] = std::find(cfg_.whitespace_ids.begin(), cfg_.whitespace_ids.end(), tokens[i]) !=
                  cfg_.whitespace_ids.end();
      }
      r.map = pl::build_pool_map(bits, B, L);
      r.bits = std::move(bits);
      break;
    }
    case Method::kGumbel:
    case Method::kEntropy:
    case Method::kUnigram: {
      r.b_hat = bd::predict_probs(h, predictor_);
      if (soft) {
        r.b_st = r.b_hat;
      } else if (cfg_.method == Method::kGumbel && opts.training) {
        auto u = bd::uniform_noise<T>(r.b_hat.shape(), *opts.rng);
        r.b_st = bd::harden(bd::gumbel_sigmoid(r.b_hat, u, static_cast<T>(cfg_.tau)));
      } else {
        r.b_st = bd::harden(r.b_hat);
      }
      r.bits = pl::to_bits(soft ? bd::harden(r.b_hat).value() : r.b_st.value());
      r.map = pl::build_pool_map(r.bits, B, L);
      break;
    }
  }
  if (r.bits.empty()) {
    // Fixed-style maps: report the boundary positions they imply.
    r.bits.assign(B * L, 0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t + 1 < L; ++t)
        r.bits[b * L + t] = r.map.group_of[b * L + t + 1] != r.map.group_of[b * L + t];
  }
  r.sf = pl::shortening_factor(r.map);

  const Var<T> null_vec = null_.defined() ? null_ : Var<T>::constant(Array<T>({d}));
  Var<T> u;
  if (soft) {
    auto counts = pl::poisson_binomial(r.b_hat);
    auto s = run_block(block2_, pl::soft_mean_pool(h, counts), full, opts);
    u = pl::soft_upsample(s, null_vec, counts);
  } else {
    Var<T> s = cfg_.pooling == Pooling::kMean
                   ? pl::mean_pool(h, r.map, uses_predictor(cfg_.method) ? r.b_st : Var<T>{})
                   : pl::subsample_pool(h, r.map);
    s = run_block(block2_, s, r.map.groups, opts);
    u = pl::upsample(s, null_vec, r.map);
  }
  auto y = run_block(block3_, add(h, u), full, opts);
  r.logits = linear(y, out_w_, out_b_);
  return r;
}

template <typename T>
LossParts<T> Model<T>::loss(const ForwardResult<T>& fwd, std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> gold, std::span<const T> weights) const {
  LossParts<T> parts;
  auto lm = nll_mean(fwd.logits, targets, weights);
  parts.lm_nats = static_cast<double>(lm.item());
  parts.total = lm;
  switch (cfg_.method) {
    case Method::kGumbel: {
      auto prior = bd::binomial_prior_loss(fwd.b_st, static_cast<T>(cfg_.alpha));
      parts.aux = static_cast<double>(prior.item());
      parts.total = add(lm, scale(prior, static_cast<T>(cfg_.prior_weight)));
      break;
    }
    case Method::kEntropy:
    case Method::kUnigram: {
      if (gold.size() != fwd.batch * fwd.length) {
        throw UsageError(method_name(cfg_.method) + " loss needs teacher boundaries for every position");
      }
      auto bce = bd::bce_loss(fwd.b_hat, gold);
      parts.aux = static_cast<double>(bce.item());
      parts.total = add(lm, scale(bce, static_cast<T>(cfg_.bce_weight)));
      break;
    }
    default: break;
  }
  return parts;
}

template <typename T>
std::vector<std::uint8_t> entropy_teacher(const Array<T>& logits, std::size_t k) {
  if (logits.rank() != 3) throw UsageError("entropy_teacher expects [B, L, V] logits");
  const std::size_t B = logits.dim(0), L = logits.dim(1);
  const auto h = bd::entropy_from_logits(logits);
  std::vector<std::uint8_t> out;
  out.reserve(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    auto row = bd::spike_boundaries(std::span<const double>(h.data() + b * L, L), k);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  return Model<float>(cfg, 0).params().scalar_count();
}

template class Model<float>;
template class Model<double>;
template std::vector<std::uint8_t> entropy_teacher<float>(const Array<float>&, std::size_t);
template std::vector<std::uint8_t> entropy_teacher<double>(const Array<double>&, std::size_t);

}  // namespace dpt::hourglass
