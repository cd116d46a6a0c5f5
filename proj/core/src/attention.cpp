#include "dpt/hourglass/attention.hpp"

#include <cmath>

#include "dpt/error.hpp"

namespace dpt::hourglass {

using namespace dpt::ad;

namespace {

template <typename T>
Array<T> normal_init(Shape s, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  Array<T> a(std::move(s));
  for (auto& x : a.values()) x = static_cast<T>(n(rng));
  return a;
}

// [B, L, d] -> [B, H, L, d / H]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {B, L, heads, d / heads}), {0, 2, 1, 3});
}

}  // namespace

template <typename T>
LayerParams<T> make_layer(ParameterSet<T>& params, const std::string& prefix, std::size_t d, std::size_t ff,
                          std::size_t heads, Rng& rng) {
  LayerParams<T> p;
  p.w_qkv = params.add(prefix + ".attn.w_qkv", normal_init<T>({d, 3 * d}, rng));
  p.w_out = params.add(prefix + ".attn.w_out", normal_init<T>({d, d}, rng));
  p.w_rel = params.add(prefix + ".attn.w_rel", normal_init<T>({d, d}, rng));
  p.u = params.add(prefix + ".attn.u", Array<T>({heads, d / heads}));
  p.v = params.add(prefix + ".attn.v", Array<T>({heads, d / heads}));
  p.ln1_g = params.add(prefix + ".ln1.g", Array<T>({d}, T(1)));
  p.ln1_b = params.add(prefix + ".ln1.b", Array<T>({d}));
  p.ff_w1 = params.add(prefix + ".ff.w1", normal_init<T>({d, ff}, rng));
  p.ff_b1 = params.add(prefix + ".ff.b1", Array<T>({ff}));
  p.ff_w2 = params.add(prefix + ".ff.w2", normal_init<T>({ff, d}, rng));
  p.ff_b2 = params.add(prefix + ".ff.b2", Array<T>({d}));
  p.ln2_g = params.add(prefix + ".ln2.g", Array<T>({d}, T(1)));
  p.ln2_b = params.add(prefix + ".ln2.b", Array<T>({d}));
  return p;
}

template <typename T>
Array<T> sinusoids(std::size_t n, std::size_t d) {
  Array<T> r({n, d});
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / double(d));
      r[pos * d + i] = static_cast<T>(std::sin(double(pos) * freq));
      if (i + 1 < d) r[pos * d + i + 1] = static_cast<T>(std::cos(double(pos) * freq));
    }
  return r;
}

template <typename T>
Var<T> layer_forward(const Var<T>& x, const LayerParams<T>& p, std::span<const std::size_t> valid,
                     const LayerContext& ctx) {
  if (x.shape().size() != 3) throw ConfigError("layer_forward expects [B, L, d], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), H = ctx.heads, dh = d / H;
  const T drop = static_cast<T>(ctx.dropout);
  const bool noisy = ctx.training && drop > 0;
  if (noisy && ctx.rng == nullptr) throw InternalError("dropout needs an rng");
  Rng dummy;
  Rng& rng = ctx.rng ? *ctx.rng : dummy;

  auto qkv = matmul(x, p.w_qkv);
  // Query scaling folded in before the biases are added, so scores need no
  // extra pass over the [L, L] maps.
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(double(dh)));
  auto q = reshape(slice(qkv, 2, 0, d), {B, L, H, dh});
  auto k = split_heads(slice(qkv, 2, d, d), H);
  auto val = split_heads(slice(qkv, 2, 2 * d, d), H);
  auto qu = permute(scale(add(q, p.u), inv_sqrt), {0, 2, 1, 3});
  auto qv = permute(scale(add(q, p.v), inv_sqrt), {0, 2, 1, 3});

  auto r = matmul(Var<T>::constant(sinusoids<T>(L, d)), p.w_rel);  // [L, d]
  auto rh = expand_leading(permute(reshape(r, {L, H, dh}), {1, 0, 2}), B);  // [B, H, L, dh]

  auto content = matmul(qu, k, Op::kNone, Op::kTrans);
  auto position = matmul(qv, rh, Op::kNone, Op::kTrans);  // indexed by distance
  auto probs = dropout(rel_causal_softmax(content, position, valid), drop, rng, noisy);
  auto attn = reshape(permute(matmul(probs, val), {0, 2, 1, 3}), {B, L, d});
  attn = dropout(matmul(attn, p.w_out), drop, rng, noisy);
  auto h = layer_norm(add(x, attn), p.ln1_g, p.ln1_b);

  auto inner = dropout(gelu(linear(h, p.ff_w1, p.ff_b1)), drop, rng, noisy);
  auto out = dropout(linear(inner, p.ff_w2, p.ff_b2), drop, rng, noisy);
  return layer_norm(add(h, out), p.ln2_g, p.ln2_b);
}

#define DPT_INSTANTIATE_LAYER(T)                                                                        \
  template LayerParams<T> make_layer<T>(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, \
                                        std::size_t, Rng&);                                             \
  template Array<T> sinusoids<T>(std::size_t, std::size_t);                                             \
  template Var<T> layer_forward<T>(const Var<T>&, const LayerParams<T>&, std::span<const std::size_t>,  \
                                   const LayerContext&);

DPT_INSTANTIATE_LAYER(float)
DPT_INSTANTIATE_LAYER(double)

}  // namespace dpt::hourglass
