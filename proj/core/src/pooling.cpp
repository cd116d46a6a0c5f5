#include "dpt/pooling/pooling.hpp"

#include <algorithm>
#include <numeric>

#include "dpt/error.hpp"

namespace dpt::pooling {

using namespace dpt::ad;

std::size_t PoolMap::max_groups() const {
  return groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end());
}

std::size_t PoolMap::total_groups() const { return std::accumulate(groups.begin(), groups.end(), std::size_t{0}); }

PoolMap build_pool_map(std::span<const std::uint8_t> b, std::size_t batch, std::size_t length) {
  if (length == 0) throw UsageError("pool map needs length >= 1");
  if (b.size() != batch * length) throw UsageError("pool map: boundary count does not match batch x length");
  PoolMap m;
  m.batch = batch;
  m.length = length;
  m.groups.resize(batch);
  m.group_of.resize(batch * length);
  m.up_index.resize(batch * length);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::uint8_t* br = b.data() + r * length;
    std::int32_t c = 0, seen = 0;
    for (std::size_t t = 0; t < length; ++t) {
      m.group_of[r * length + t] = c;
      seen += br[t] != 0;
      m.up_index[r * length + t] = seen - 1;
      if (br[t] && t + 1 < length) ++c;
    }
    m.groups[r] = static_cast<std::size_t>(c) + 1;
  }
  return m;
}

template <typename T>
std::vector<std::uint8_t> to_bits(const Array<T>& b) {
  std::vector<std::uint8_t> out(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = b[i] >= T(0.5);
  return out;
}

PoolMap fixed_pool_map(std::size_t batch, std::size_t length, std::size_t k) {
  if (k == 0) throw UsageError("fixed pooling needs k >= 1");
  if (length == 0) throw UsageError("pool map needs length >= 1");
  PoolMap m;
  m.batch = batch;
  m.length = length;
  m.groups.assign(batch, (length + k - 1) / k);
  m.group_of.resize(batch * length);
  m.up_index.resize(batch * length);
  const auto kk = static_cast<std::int64_t>(k);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t t = 0; t < length; ++t) {
      m.group_of[r * length + t] = static_cast<std::int32_t>(t / k);
      // ceil((t1 - k + 1) / k) with 1-based t1 = t + 1; non-positive -> null.
      const std::int64_t num = static_cast<std::int64_t>(t) + 2 - kk;
      const std::int64_t idx = num <= 0 ? 0 : (num + kk - 1) / kk;
      m.up_index[r * length + t] = static_cast<std::int32_t>(idx) - 1;
    }
  return m;
}

double shortening_factor(const PoolMap& map) {
  const std::size_t g = map.total_groups();
  if (g == 0) throw UsageError("shortening factor of an empty map");
  return double(map.batch * map.length) / double(g);
}

double fixed_shortening_factor(std::size_t k, std::size_t length) {
  if (k == 0 || length == 0) throw UsageError("fixed shortening factor needs k, l >= 1");
  return double(length) / double((length + k - 1) / k);
}

namespace {

void check_h(const Shape& s, const PoolMap& map, const char* what) {
  if (s.size() != 3 || s[0] != map.batch || s[1] != map.length) {
    throw UsageError(std::string(what) + ": hidden states " + shape_str(s) + " do not match pool map [" +
                     std::to_string(map.batch) + ", " + std::to_string(map.length) + "]");
  }
}

}  // namespace

template <typename T>
Var<T> mean_pool(const Var<T>& h, const PoolMap& map, const Var<T>& b_st) {
  check_h(h.shape(), map, "mean_pool");
  const bool with_b = b_st.defined();
  if (with_b && b_st.shape() != Shape{map.batch, map.length}) {
    throw UsageError("mean_pool: boundaries " + shape_str(b_st.shape()) + " do not match hidden states");
  }
  const std::size_t B = map.batch, L = map.length, d = h.dim(2), G = map.max_groups();
  Array<T> out({B, G, d});
  std::vector<T> inv_n(B * G, T(0));
  for (std::size_t r = 0; r < B; ++r) {
    std::vector<std::size_t> n(G, 0);
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t c = static_cast<std::size_t>(map.group_of[r * L + t]);
      ++n[c];
      const T* ht = h.value().data() + (r * L + t) * d;
      T* sc = out.data() + (r * G + c) * d;
      for (std::size_t j = 0; j < d; ++j) sc[j] += ht[j];
    }
    for (std::size_t c = 0; c < G; ++c) {
      if (n[c] == 0) continue;
      inv_n[r * G + c] = T(1) / T(n[c]);
      T* sc = out.data() + (r * G + c) * d;
      for (std::size_t j = 0; j < d; ++j) sc[j] *= inv_n[r * G + c];
    }
  }
  std::vector<Var<T>> parents = {h};
  if (with_b) parents.push_back(b_st);
  return make_result<T>(std::move(out), parents, [map, B, L, d, G, inv_n, with_b](Node<T>& self) {
    const T* gs = self.grad.data();
    if (self.parents[0]->requires_grad) {
      T* gh = self.parents[0]->grad_buffer().data();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t t = 0; t < L; ++t) {
          const std::size_t c = static_cast<std::size_t>(map.group_of[r * L + t]);
          const T w = inv_n[r * G + c];
          const T* g = gs + (r * G + c) * d;
          T* o = gh + (r * L + t) * d;
          for (std::size_t j = 0; j < d; ++j) o[j] += g[j] * w;
        }
    }
    if (with_b && self.parents[1]->requires_grad) {
      T* gb = self.parents[1]->grad_buffer().data();
      const T* hv = self.parents[0]->value.data();
      const T* sv = self.value.data();
      for (std::size_t r = 0; r < B; ++r) {
        // Suffix sum of membership-weight gradients over positions > i.
        T acc = 0;
        for (std::size_t t = L; t-- > 0;) {
          gb[r * L + t] += acc;
          const std::size_t c = static_cast<std::size_t>(map.group_of[r * L + t]);
          const T* g = gs + (r * G + c) * d;
          const T* ht = hv + (r * L + t) * d;
          const T* sc = sv + (r * G + c) * d;
          T dot = 0;
          for (std::size_t j = 0; j < d; ++j) dot += g[j] * (ht[j] - sc[j]);
          acc += dot * inv_n[r * G + c];
        }
      }
    }
  });
}

template <typename T>
Var<T> subsample_pool(const Var<T>& h, const PoolMap& map) {
  check_h(h.shape(), map, "subsample_pool");
  const std::size_t B = map.batch, L = map.length, d = h.dim(2), G = map.max_groups();
  std::vector<std::int64_t> src(B * G, -1);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t t = 0; t < L; ++t) src[r * G + static_cast<std::size_t>(map.group_of[r * L + t])] = std::int64_t(r * L + t);
  Array<T> out({B, G, d});
  for (std::size_t i = 0; i < B * G; ++i) {
    if (src[i] < 0) continue;
    std::copy_n(h.value().data() + src[i] * std::int64_t(d), d, out.data() + i * d);
  }
  return make_result<T>(std::move(out), {h}, [src = std::move(src), d](Node<T>& self) {
    T* gh = self.parents[0]->grad_buffer().data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] < 0) continue;
      T* o = gh + src[i] * std::int64_t(d);
      for (std::size_t j = 0; j < d; ++j) o[j] += g[i * d + j];
    }
  });
}

template <typename T>
Var<T> upsample(const Var<T>& s, const Var<T>& null_vec, const PoolMap& map) {
  const Shape& ss = s.shape();
  if (ss.size() != 3 || ss[0] != map.batch || ss[1] < map.max_groups()) {
    throw UsageError("upsample: segment states " + shape_str(ss) + " do not cover the pool map");
  }
  const std::size_t B = map.batch, L = map.length, G = ss[1], d = ss[2];
  if (null_vec.shape() != Shape{d}) throw UsageError("upsample: null vector must be [" + std::to_string(d) + "]");
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t t = 0; t < L; ++t)
      if (map.up_index[r * L + t] >= static_cast<std::int32_t>(map.groups[r])) {
        throw InternalError("upsample: index past the last segment");
      }
  Array<T> out({B, L, d});
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t t = 0; t < L; ++t) {
      const std::int32_t m = map.up_index[r * L + t];
      const T* src = m < 0 ? null_vec.value().data() : s.value().data() + (r * G + std::size_t(m)) * d;
      std::copy_n(src, d, out.data() + (r * L + t) * d);
    }
  return make_result<T>(std::move(out), {s, null_vec}, [map, B, L, G, d](Node<T>& self) {
    const T* g = self.grad.data();
    T* gs = self.parents[0]->requires_grad ? self.parents[0]->grad_buffer().data() : nullptr;
    T* gn = self.parents[1]->requires_grad ? self.parents[1]->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t t = 0; t < L; ++t) {
        const std::int32_t m = map.up_index[r * L + t];
        T* dst = m < 0 ? gn : (gs ? gs + (r * G + std::size_t(m)) * d : nullptr);
        if (!dst) continue;
        const T* gt = g + (r * L + t) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += gt[j];
      }
  });
}

Array<double> pool_matrix(std::span<const std::uint8_t> b) {
  const PoolMap m = build_pool_map(b, 1, b.size());
  Array<double> out({b.size(), m.groups[0]});
  for (std::size_t t = 0; t < b.size(); ++t) out[t * m.groups[0] + std::size_t(m.group_of[t])] = 1.0;
  return out;
}

template <typename T>
Var<T> poisson_binomial(const Var<T>& beta) {
  if (beta.shape().size() != 2) throw UsageError("poisson_binomial expects [B, L]");
  const std::size_t B = beta.dim(0), L = beta.dim(1), W = L + 1;
  Array<T> out({B, W, W});
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < B; ++r) {
    T* p = out.data() + r * W * W;
    p[0] = T(1);
    for (std::size_t i = 0; i < L; ++i) {
      const T q = bv[r * L + i];
      const T* cur = p + i * W;
      T* nxt = p + (i + 1) * W;
      for (std::size_t j = 0; j <= i + 1; ++j) {
        const T stay = j <= i ? cur[j] * (T(1) - q) : T(0);
        const T move = j > 0 ? cur[j - 1] * q : T(0);
        nxt[j] = stay + move;
      }
    }
  }
  return make_result<T>(std::move(out), {beta}, [B, L, W](Node<T>& self) {
    T* gb = self.parents[0]->grad_buffer().data();
    const T* bv = self.parents[0]->value.data();
    const T* P = self.value.data();
    const T* G0 = self.grad.data();
    std::vector<T> gcur(W), gnext(W);
    for (std::size_t r = 0; r < B; ++r) {
      const T* p = P + r * W * W;
      const T* g = G0 + r * W * W;
      // gnext holds the total gradient of row i + 1 while stepping back.
      std::copy_n(g + L * W, W, gnext.begin());
      for (std::size_t i = L; i-- > 0;) {
        const T q = bv[r * L + i];
        const T* cur = p + i * W;
        T dq = 0;
        for (std::size_t j = 0; j < W; ++j) {
          const T prev = j > 0 ? cur[j - 1] : T(0);
          dq += gnext[j] * (prev - cur[j]);
        }
        gb[r * L + i] += dq;
        for (std::size_t j = 0; j < W; ++j) {
          const T up = j + 1 < W ? gnext[j + 1] : T(0);
          gcur[j] = g[i * W + j] + gnext[j] * (T(1) - q) + up * q;
        }
        std::swap(gcur, gnext);
      }
    }
  });
}

template <typename T>
Var<T> soft_mean_pool(const Var<T>& h, const Var<T>& count_probs) {
  const std::size_t L = h.dim(1);
  // P(c_t = j) for t, j in [0, L): rows 0..L-1 of the count table.
  auto assign = slice(slice(count_probs, 1, 0, L), 2, 0, L);  // [B, t, j]
  auto weights = normalize_last(permute(assign, {0, 2, 1}));  // [B, j, t]
  return matmul(weights, h);
}

template <typename T>
Var<T> soft_upsample(const Var<T>& s, const Var<T>& null_vec, const Var<T>& count_probs) {
  const std::size_t B = s.dim(0), L = s.dim(1), d = s.dim(2);
  auto up = slice(count_probs, 1, 1, L);  // P(m_t = m), [B, L, L + 1]
  auto ext = concat<T>({reshape(expand_leading(null_vec, B), {B, 1, d}), s}, 1);
  return matmul(up, ext);
}

#define DPT_INSTANTIATE_POOLING(T)                                                  \
  template std::vector<std::uint8_t> to_bits<T>(const Array<T>&);                   \
  template Var<T> mean_pool<T>(const Var<T>&, const PoolMap&, const Var<T>&);       \
  template Var<T> subsample_pool<T>(const Var<T>&, const PoolMap&);                 \
  template Var<T> upsample<T>(const Var<T>&, const Var<T>&, const PoolMap&);        \
  template Var<T> poisson_binomial<T>(const Var<T>&);                               \
  template Var<T> soft_mean_pool<T>(const Var<T>&, const Var<T>&);                  \
  template Var<T> soft_upsample<T>(const Var<T>&, const Var<T>&, const Var<T>&);

DPT_INSTANTIATE_POOLING(float)
DPT_INSTANTIATE_POOLING(double)

}  // namespace dpt::pooling
