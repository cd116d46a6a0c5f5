#include "dpt/numerics/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "dpt/error.hpp"
#include "dpt/numerics/special.hpp"

namespace dpt::ad {
namespace {

template <typename T>
bool needs(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename T>
Array<T>& grad_of(Node<T>& self, std::size_t i) {
  return self.parents[i]->grad_buffer();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ConfigError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

// Element-wise binary op with suffix broadcasting. `big` selects which
// operand carries the output shape.
struct Broadcast {
  Shape out_shape;
  std::size_t n = 0;       // output size
  std::size_t small_n = 0; // size of the broadcast operand
  bool a_is_big = true;
  bool same = true;
};

template <typename T>
Broadcast plan_broadcast(const Var<T>& a, const Var<T>& b, const char* op) {
  Broadcast p;
  if (a.shape() == b.shape()) {
    p.out_shape = a.shape();
    p.n = p.small_n = a.size();
    return p;
  }
  p.same = false;
  if (is_suffix(b.shape(), a.shape())) {
    p.a_is_big = true;
    p.out_shape = a.shape();
    p.n = a.size();
    p.small_n = b.size();
  } else if (is_suffix(a.shape(), b.shape())) {
    p.a_is_big = false;
    p.out_shape = b.shape();
    p.n = b.size();
    p.small_n = a.size();
  } else {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  return p;
}

// Index into an operand given the output index.
inline std::size_t bidx(const Broadcast& p, bool is_a, std::size_t i) {
  if (p.same) return i;
  const bool big = is_a == p.a_is_big;
  return big ? i : i % p.small_n;
}

template <typename T, typename F>
Var<T> unary(const Var<T>& x, F f, std::function<void(Node<T>&)> back) {
  auto out = Array<T>::uninitialized(x.shape());
  const T* xv = x.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, std::move(back));
}

template <typename T>
Shape matmul_out_shape(const Shape& as, const Shape& bs, Op op_a, Op op_b, std::size_t& m,
                       std::size_t& n, std::size_t& k, std::size_t& batch, bool& shared_b) {
  if (as.size() < 2 || bs.size() < 2) {
    throw ConfigError("matmul: operands need rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t ar = as[as.size() - 2], ac = as[as.size() - 1];
  const std::size_t br = bs[bs.size() - 2], bc = bs[bs.size() - 1];
  m = op_a == Op::kNone ? ar : ac;
  k = op_a == Op::kNone ? ac : ar;
  const std::size_t kb = op_b == Op::kNone ? br : bc;
  n = op_b == Op::kNone ? bc : br;
  if (k != kb) {
    throw ConfigError("matmul: inner dimensions differ, " + shape_str(as) + " vs " + shape_str(bs));
  }
  Shape out;
  shared_b = bs.size() == 2 && op_a == Op::kNone;
  if (shared_b) {
    out.assign(as.begin(), as.end() - 1);
    out.push_back(n);
    batch = 1;
    m = shape_size(as) / k;
    return out;
  }
  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    throw ConfigError("matmul: leading axes differ, " + shape_str(as) + " vs " + shape_str(bs));
  }
  out.assign(as.begin(), as.end() - 2);
  batch = shape_size(out);
  out.push_back(m);
  out.push_back(n);
  return out;
}

inline Op flip(Op op) { return op == Op::kNone ? Op::kTrans : Op::kNone; }

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Broadcast p = plan_broadcast(a, b, "add");
  auto out = Array<T>::uninitialized(p.out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* o = out.data();
  if (p.same) {
    for (std::size_t i = 0; i < p.n; ++i) o[i] = av[i] + bv[i];
  } else {
    for (std::size_t i = 0; i < p.n; ++i) o[i] = av[bidx(p, true, i)] + bv[bidx(p, false, i)];
  }
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& self) {
    const T* g = self.grad.data();
    for (std::size_t side = 0; side < 2; ++side) {
      if (!needs(self, side)) continue;
      T* ga = grad_of(self, side).data();
      for (std::size_t i = 0; i < p.n; ++i) ga[bidx(p, side == 0, i)] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Broadcast p = plan_broadcast(a, b, "sub");
  auto out = Array<T>::uninitialized(p.out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < p.n; ++i) o[i] = av[bidx(p, true, i)] - bv[bidx(p, false, i)];
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& self) {
    const T* g = self.grad.data();
    if (needs(self, 0)) {
      T* ga = grad_of(self, 0).data();
      for (std::size_t i = 0; i < p.n; ++i) ga[bidx(p, true, i)] += g[i];
    }
    if (needs(self, 1)) {
      T* gb = grad_of(self, 1).data();
      for (std::size_t i = 0; i < p.n; ++i) gb[bidx(p, false, i)] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Broadcast p = plan_broadcast(a, b, "mul");
  auto out = Array<T>::uninitialized(p.out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < p.n; ++i) o[i] = av[bidx(p, true, i)] * bv[bidx(p, false, i)];
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.parents[0]->value.data();
    const T* bv = self.parents[1]->value.data();
    if (needs(self, 0)) {
      T* ga = grad_of(self, 0).data();
      for (std::size_t i = 0; i < p.n; ++i) ga[bidx(p, true, i)] += g[i] * bv[bidx(p, false, i)];
    }
    if (needs(self, 1)) {
      T* gb = grad_of(self, 1).data();
      for (std::size_t i = 0; i < p.n; ++i) gb[bidx(p, false, i)] += g[i] * av[bidx(p, true, i)];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v * s; }, [s](Node<T>& self) {
    T* ga = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v + s; }, [](Node<T>& self) {
    T* ga = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Op op_a, Op op_b) {
  std::size_t m, n, k, batch;
  bool shared_b;
  Shape out_shape = matmul_out_shape<T>(a.shape(), b.shape(), op_a, op_b, m, n, k, batch, shared_b);
  const std::size_t lda = a.shape().back();
  const std::size_t ldb = b.shape().back();
  const std::size_t a_stride = shared_b ? 0 : m * k;
  const std::size_t b_stride = shared_b ? 0 : k * n;
  auto out = Array<T>::uninitialized(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    blas::gemm<T>(op_a, op_b, m, n, k, a.value().data() + bi * a_stride, lda,
                  b.value().data() + bi * b_stride, ldb, out.data() + bi * m * n, n, false);
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.parents[0]->value.data();
    const T* bv = self.parents[1]->value.data();
    if (needs(self, 0)) {
      T* ga = grad_of(self, 0).data();
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gb_ = g + bi * m * n;
        const T* bb = bv + bi * b_stride;
        T* gab = ga + bi * a_stride;
        if (op_a == Op::kNone) {
          blas::gemm<T>(Op::kNone, flip(op_b), m, k, n, gb_, n, bb, ldb, gab, lda, true);
        } else {
          blas::gemm<T>(op_b, Op::kTrans, k, m, n, bb, ldb, gb_, n, gab, lda, true);
        }
      }
    }
    if (needs(self, 1)) {
      T* gbv = grad_of(self, 1).data();
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gb_ = g + bi * m * n;
        const T* ab = av + bi * a_stride;
        T* gbb = gbv + bi * b_stride;
        if (op_b == Op::kNone) {
          blas::gemm<T>(flip(op_a), Op::kNone, k, n, m, ab, lda, gb_, n, gbb, ldb, true);
        } else {
          blas::gemm<T>(Op::kTrans, op_a, n, k, m, gb_, n, ab, lda, gbb, ldb, true);
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Array<T> out(Shape{});
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  out[0] = acc;
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ConfigError("mean of an empty array");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.shape().size());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  Array<T> out(out_shape);
  const T* xv = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = xv + (o * s.extent + e) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        T* dst = gx + (o * s.extent + e) * s.inner;
        const T* src = g + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.shape().size());
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(x.shape()[ax]));
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ConfigError("concat of zero arrays");
  const std::size_t ax = norm_axis(axis, xs[0].shape().size());
  Shape out_shape = xs[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != out_shape.size()) {
      throw ConfigError("concat: rank mismatch " + shape_str(xs[0].shape()) + " vs " + shape_str(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != out_shape[i]) {
        throw ConfigError("concat: shape mismatch " + shape_str(xs[0].shape()) + " vs " + shape_str(s));
      }
    }
    extents.push_back(s[ax]);
    total += s[ax];
  }
  out_shape[ax] = total;
  const AxisSplit os = split_at(out_shape, ax);
  auto out = Array<T>::uninitialized(out_shape);
  std::size_t off = 0;
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    const std::size_t chunk = extents[xi] * os.inner;
    const T* src = xs[xi].value().data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * total * os.inner + off * os.inner);
    }
    off += extents[xi];
  }
  return make_result<T>(std::move(out), xs, [os, extents, total](Node<T>& self) {
    const T* g = self.grad.data();
    std::size_t off = 0;
    for (std::size_t xi = 0; xi < extents.size(); ++xi) {
      const std::size_t chunk = extents[xi] * os.inner;
      if (needs(self, xi)) {
        T* gx = grad_of(self, xi).data();
        for (std::size_t o = 0; o < os.outer; ++o) {
          const T* src = g + o * total * os.inner + off * os.inner;
          T* dst = gx + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      off += extents[xi];
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t len) {
  const std::size_t ax = norm_axis(axis, x.shape().size());
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + len > s.extent) {
    throw ConfigError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                      ") out of range for shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = len;
  auto out = Array<T>::uninitialized(out_shape);
  const T* xv = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = xv + (o * s.extent + start) * s.inner;
    std::copy(src, src + len * s.inner, out.data() + o * len * s.inner);
  }
  return make_result<T>(std::move(out), {x}, [s, start, len](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = gx + (o * s.extent + start) * s.inner;
      const T* src = g + o * len * s.inner;
      for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> shift_right(const Var<T>& x, int axis, std::size_t n, T fill) {
  const std::size_t ax = norm_axis(axis, x.shape().size());
  const AxisSplit s = split_at(x.shape(), ax);
  Array<T> out(x.shape(), fill);
  const T* xv = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = n; e < s.extent; ++e) {
      std::copy(xv + (o * s.extent + e - n) * s.inner, xv + (o * s.extent + e - n + 1) * s.inner,
                out.data() + (o * s.extent + e) * s.inner);
    }
  }
  return make_result<T>(std::move(out), {x}, [s, n](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = n; e < s.extent; ++e) {
        const T* src = g + (o * s.extent + e) * s.inner;
        T* dst = gx + (o * s.extent + e - n) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Array<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r || r > 4) {
    throw ConfigError("permute: bad permutation for shape " + shape_str(in));
  }
  // Pad to rank 4 so one loop nest handles every case.
  std::size_t in4[4] = {1, 1, 1, 1};
  std::size_t perm4[4] = {0, 1, 2, 3};
  const std::size_t pad = 4 - r;
  for (std::size_t i = 0; i < r; ++i) {
    in4[pad + i] = in[i];
    perm4[pad + i] = pad + perm[i];
  }
  std::size_t in_stride[4];
  in_stride[3] = 1;
  for (int i = 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in4[i + 1];
  std::size_t out4[4], src_stride[4];
  for (std::size_t i = 0; i < 4; ++i) {
    out4[i] = in4[perm4[i]];
    src_stride[i] = in_stride[perm4[i]];
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[perm[i]];
  auto out = Array<T>::uninitialized(out_shape);
  const T* xv = x.value().data();
  T* o = out.data();
  std::size_t idx = 0;
  for (std::size_t a = 0; a < out4[0]; ++a)
    for (std::size_t b = 0; b < out4[1]; ++b)
      for (std::size_t c = 0; c < out4[2]; ++c) {
        const std::size_t base = a * src_stride[0] + b * src_stride[1] + c * src_stride[2];
        for (std::size_t d = 0; d < out4[3]; ++d) o[idx++] = xv[base + d * src_stride[3]];
      }
  std::array<std::size_t, 4> o4{out4[0], out4[1], out4[2], out4[3]};
  std::array<std::size_t, 4> ss{src_stride[0], src_stride[1], src_stride[2], src_stride[3]};
  return make_result<T>(std::move(out), {x}, [o4, ss](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    std::size_t idx = 0;
    for (std::size_t a = 0; a < o4[0]; ++a)
      for (std::size_t b = 0; b < o4[1]; ++b)
        for (std::size_t c = 0; c < o4[2]; ++c) {
          const std::size_t base = a * ss[0] + b * ss[1] + c * ss[2];
          for (std::size_t d = 0; d < o4[3]; ++d) gx[base + d * ss[3]] += g[idx++];
        }
  });
}

template <typename T>
Var<T> expand_leading(const Var<T>& x, std::size_t n) {
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin(), n);
  auto out = Array<T>::uninitialized(out_shape);
  const std::size_t m = x.size();
  for (std::size_t i = 0; i < n; ++i) std::copy(x.value().data(), x.value().data() + m, out.data() + i * m);
  return make_result<T>(std::move(out), {x}, [n, m](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[j] += g[i * m + j];
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t v = x.shape().back();
  const std::size_t rows = x.size() / v;
  auto out = Array<T>::uninitialized(x.shape());
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * v;
    T* yr = out.data() + r * v;
    const T mx = *std::max_element(xr, xr + v);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::size_t j = 0; j < v; ++j) yr[j] /= s;
  }
  return make_result<T>(std::move(out), {x}, [v, rows](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < v; ++j) dot += g[r * v + j] * y[r * v + j];
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += y[r * v + j] * (g[r * v + j] - dot);
    }
  });
}

template <typename T>
Var<T> normalize_last(const Var<T>& x) {
  const std::size_t v = x.shape().back();
  const std::size_t rows = x.size() / v;
  auto out = Array<T>::uninitialized(x.shape());
  std::vector<T> sums(rows);
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += xv[r * v + j];
    if (!(s > 0)) throw DataError("normalize_last: row sum must be positive");
    sums[r] = s;
    for (std::size_t j = 0; j < v; ++j) out[r * v + j] = xv[r * v + j] / s;
  }
  return make_result<T>(std::move(out), {x}, [v, rows, sums = std::move(sums)](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < v; ++j) dot += g[r * v + j] * y[r * v + j];
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += (g[r * v + j] - dot) / sums[r];
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const std::size_t v = x.shape().back();
  const std::size_t rows = x.size() / v;
  auto out = Array<T>::uninitialized(x.shape());
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * v;
    T* yr = out.data() + r * v;
    const T mx = *std::max_element(xr, xr + v);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(xr[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < v; ++j) yr[j] = xr[j] - lse;
  }
  return make_result<T>(std::move(out), {x}, [v, rows](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T gs = 0;
      for (std::size_t j = 0; j < v; ++j) gs += g[r * v + j];
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += g[r * v + j] - std::exp(y[r * v + j]) * gs;
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](Node<T>& self) {
        T* gx = grad_of(self, 0).data();
        const T* g = self.grad.data();
        const T* y = self.value.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary<T>(x, [](T v) { return std::log(v); }, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i] / xv[i];
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary<T>(x, [](T v) { return std::exp(v); }, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i] * y[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return unary<T>(x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
                  [](Node<T>& self) {
                    T* gx = grad_of(self, 0).data();
                    const T* g = self.grad.data();
                    const T* xv = self.parents[0]->value.data();
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      const T v = xv[i];
                      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
                      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
                      gx[i] += g[i] * (cdf + v * pdf);
                    }
                  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary<T>(x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
                  [lo, hi](Node<T>& self) {
                    T* gx = grad_of(self, 0).data();
                    const T* g = self.grad.data();
                    const T* xv = self.parents[0]->value.data();
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      if (xv[i] >= lo && xv[i] <= hi) gx[i] += g[i];
                    }
                  });
}

template <typename T>
Var<T> lgamma(const Var<T>& x) {
  return unary<T>(x, [](T v) { return std::lgamma(v); }, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += g[i] * static_cast<T>(digamma(static_cast<double>(xv[i])));
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ConfigError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                      shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto out = Array<T>::uninitialized(x.shape());
  auto xhat = Array<T>::uninitialized(x.shape());
  std::vector<T> rstd(rows);
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                          const T* g = self.grad.data();
                          const T* gv = self.parents[1]->value.data();
                          if (needs(self, 1)) {
                            T* gg = grad_of(self, 1).data();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                          }
                          if (needs(self, 2)) {
                            T* gb = grad_of(self, 2).data();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                          }
                          if (needs(self, 0)) {
                            T* gx = grad_of(self, 0).data();
                            for (std::size_t r = 0; r < rows; ++r) {
                              T m1 = 0, m2 = 0;
                              for (std::size_t j = 0; j < d; ++j) {
                                const T dh = g[r * d + j] * gv[j];
                                m1 += dh;
                                m2 += dh * xhat[r * d + j];
                              }
                              m1 /= static_cast<T>(d);
                              m2 /= static_cast<T>(d);
                              for (std::size_t j = 0; j < d; ++j) {
                                const T dh = g[r * d + j] * gv[j];
                                gx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids, const Shape& id_shape) {
  if (table.shape().size() != 2) throw ConfigError("embedding table must be rank 2, got " + shape_str(table.shape()));
  if (shape_size(id_shape) != ids.size()) {
    throw ConfigError("embedding: id shape " + shape_str(id_shape) + " does not match " +
                      std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  Shape out_shape = id_shape;
  out_shape.push_back(d);
  auto out = Array<T>::uninitialized(out_shape);
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw ConfigError("embedding: id " + std::to_string(idv[i]) + " outside vocabulary of " + std::to_string(vocab));
    }
    const T* src = table.value().data() + static_cast<std::size_t>(idv[i]) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  return make_result<T>(std::move(out), {table}, [d, idv = std::move(idv)](Node<T>& self) {
    T* gt = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* dst = gt + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, Rng& rng, bool training) {
  if (!training || p <= T(0)) return x;
  if (p >= T(1)) throw ConfigError("dropout rate must be < 1");
  // Four 16-bit draws per engine call; the rate is quantized to 1/65536.
  const auto drop_below = static_cast<std::uint64_t>(std::lround(static_cast<double>(p) * 65536.0));
  const T s = T(1) / (T(1) - p);
  std::vector<std::uint8_t> keep(x.size());
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (i % 4 == 0) bits = rng();
    keep[i] = (bits & 0xFFFF) >= drop_below;
    bits >>= 16;
  }
  auto out = Array<T>::uninitialized(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? xv[i] * s : T(0);
  return make_result<T>(std::move(out), {x}, [keep = std::move(keep), s](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (keep[i]) gx[i] += g[i] * s;
  });
}

template <typename T>
Var<T> masked_fill(const Var<T>& x, const Array<std::uint8_t>& mask, T value) {
  if (mask.shape() != x.shape() && !is_suffix(mask.shape(), x.shape())) {
    throw ConfigError("masked_fill: mask shape " + shape_str(mask.shape()) + " vs " + shape_str(x.shape()));
  }
  const std::size_t mn = mask.size();
  auto out = Array<T>::uninitialized(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i % mn] ? value : x.value()[i];
  return make_result<T>(std::move(out), {x}, [mask, mn](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (!mask[i % mn]) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> causal_softmax(const Var<T>& scores, std::span<const std::size_t> valid) {
  const Shape& s = scores.shape();
  if (s.size() != 4 || valid.size() != s[0]) {
    throw ConfigError("causal_softmax: expected [B, H, Lq, Lk] with one valid length per batch row, got " +
                      shape_str(s));
  }
  const std::size_t batch = s[0], heads = s[1], lq = s[2], lk = s[3];
  std::vector<std::size_t> limit(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (valid[b] == 0 || valid[b] > lk) throw ConfigError("causal_softmax: invalid key length");
    limit[b] = valid[b];
  }
  Array<T> out(s);
  const T* xv = scores.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        const std::size_t row = ((b * heads + h) * lq + i) * lk;
        const std::size_t n = std::min(i + 1, limit[b]);
        const T* xr = xv + row;
        T* yr = out.data() + row;
        T mx = xr[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          yr[j] = std::exp(xr[j] - mx);
          z += yr[j];
        }
        const T inv = T(1) / z;
        for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
      }
  return make_result<T>(std::move(out), {scores}, [batch, heads, lq, lk, limit](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < lq; ++i) {
          const std::size_t row = ((b * heads + h) * lq + i) * lk;
          const std::size_t n = std::min(i + 1, limit[b]);
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[row + j] * y[row + j];
          for (std::size_t j = 0; j < n; ++j) gx[row + j] += y[row + j] * (g[row + j] - dot);
        }
  });
}

template <typename T>
Var<T> rel_causal_softmax(const Var<T>& content, const Var<T>& position, std::span<const std::size_t> valid) {
  const Shape& s = content.shape();
  if (s.size() != 4 || s[2] != s[3] || position.shape() != s || valid.size() != s[0]) {
    throw ConfigError("rel_causal_softmax: expected two [B, H, L, L] maps and one valid length per batch row, got " +
                      shape_str(s) + " and " + shape_str(position.shape()));
  }
  const std::size_t batch = s[0], heads = s[1], l = s[2];
  std::vector<std::size_t> limit(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (valid[b] == 0 || valid[b] > l) throw ConfigError("rel_causal_softmax: invalid key length");
    limit[b] = valid[b];
  }
  Array<T> out(s);
  const T* cv = content.value().data();
  const T* pv = position.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < l; ++i) {
        const std::size_t row = ((b * heads + h) * l + i) * l;
        const std::size_t n = std::min(i + 1, limit[b]);
        const T* cr = cv + row;
        const T* pr = pv + row;
        T* yr = out.data() + row;
        for (std::size_t j = 0; j < n; ++j) yr[j] = cr[j] + pr[i - j];
        T mx = yr[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, yr[j]);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          yr[j] = std::exp(yr[j] - mx);
          z += yr[j];
        }
        const T inv = T(1) / z;
        for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
      }
  return make_result<T>(std::move(out), {content, position}, [batch, heads, l, limit](Node<T>& self) {
    const T* g = self.grad.data();
    const T* y = self.value.data();
    T* gc = needs(self, 0) ? grad_of(self, 0).data() : nullptr;
    T* gp = needs(self, 1) ? grad_of(self, 1).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < l; ++i) {
          const std::size_t row = ((b * heads + h) * l + i) * l;
          const std::size_t n = std::min(i + 1, limit[b]);
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[row + j] * y[row + j];
          for (std::size_t j = 0; j < n; ++j) {
            const T d = y[row + j] * (g[row + j] - dot);
            if (gc) gc[row + j] += d;
            if (gp) gp[row + i - j] += d;
          }
        }
  });
}

template <typename T>
Var<T> rel_shift(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw ConfigError("rel_shift: expected [..., L, L], got " + shape_str(s));
  }
  const std::size_t l = s.back();
  const std::size_t mats = x.size() / (l * l);
  Array<T> out(s);
  const T* xv = x.value().data();
  for (std::size_t m = 0; m < mats; ++m) {
    const T* xm = xv + m * l * l;
    T* om = out.data() + m * l * l;
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j <= i; ++j) om[i * l + j] = xm[i * l + (i - j)];
  }
  return make_result<T>(std::move(out), {x}, [l, mats](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t m = 0; m < mats; ++m)
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j <= i; ++j) gx[m * l * l + i * l + (i - j)] += g[m * l * l + i * l + j];
  });
}

template <typename T>
Var<T> straight_through(const Var<T>& soft, Array<T> hard) {
  if (hard.shape() != soft.shape()) {
    throw ConfigError("straight_through: shape mismatch " + shape_str(soft.shape()) + " vs " + shape_str(hard.shape()));
  }
  return make_result<T>(std::move(hard), {soft}, [](Node<T>& self) {
    T* gx = grad_of(self, 0).data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <typename T>
Var<T> nll_mean(const Var<T>& logits, std::span<const std::int32_t> targets, std::span<const T> weights) {
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.size() / v;
  if (targets.size() != rows || (!weights.empty() && weights.size() != rows)) {
    throw ConfigError("nll_mean: " + std::to_string(targets.size()) + " targets for logits " +
                      shape_str(logits.shape()));
  }
  std::vector<T> w(rows, T(1));
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  T wsum = 0;
  for (T x : w) wsum += x;
  if (wsum <= T(0)) throw ConfigError("nll_mean: no weighted rows");
  std::vector<T> lse(rows);
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  const T* xv = logits.value().data();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * v;
    if (tv[r] < 0 || static_cast<std::size_t>(tv[r]) >= v) throw ConfigError("nll_mean: target out of range");
    const T mx = *std::max_element(xr, xr + v);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(xr[j] - mx);
    lse[r] = mx + std::log(s);
    total += w[r] * (lse[r] - xr[tv[r]]);
  }
  Array<T> out(Shape{});
  out[0] = total / wsum;
  return make_result<T>(std::move(out), {logits},
                        [v, rows, wsum, w = std::move(w), lse = std::move(lse), tv = std::move(tv)](Node<T>& self) {
                          T* gx = grad_of(self, 0).data();
                          const T* xv = self.parents[0]->value.data();
                          const T g = self.grad[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (w[r] == T(0)) continue;
                            const T c = g * w[r] / wsum;
                            for (std::size_t j = 0; j < v; ++j) {
                              gx[r * v + j] += c * std::exp(xv[r * v + j] - lse[r]);
                            }
                            gx[r * v + static_cast<std::size_t>(tv[r])] -= c;
                          }
                        });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add(matmul(x, w), b);
}

#define DPT_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale<T>(const Var<T>&, T);                                                    \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                               \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&, Op, Op);                               \
  template Var<T> sum<T>(const Var<T>&);                                                         \
  template Var<T> mean<T>(const Var<T>&);                                                        \
  template Var<T> sum_axis<T>(const Var<T>&, int);                                               \
  template Var<T> mean_axis<T>(const Var<T>&, int);                                              \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                    \
  template Var<T> slice<T>(const Var<T>&, int, std::size_t, std::size_t);                        \
  template Var<T> shift_right<T>(const Var<T>&, int, std::size_t, T);                            \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                              \
  template Var<T> permute<T>(const Var<T>&, const std::vector<std::size_t>&);                    \
  template Var<T> expand_leading<T>(const Var<T>&, std::size_t);                                 \
  template Var<T> softmax<T>(const Var<T>&);                                                     \
  template Var<T> normalize_last<T>(const Var<T>&);                                              \
  template Var<T> log_softmax<T>(const Var<T>&);                                                 \
  template Var<T> sigmoid<T>(const Var<T>&);                                                     \
  template Var<T> log<T>(const Var<T>&);                                                         \
  template Var<T> exp<T>(const Var<T>&);                                                         \
  template Var<T> gelu<T>(const Var<T>&);                                                        \
  template Var<T> clamp<T>(const Var<T>&, T, T);                                                 \
  template Var<T> lgamma<T>(const Var<T>&);                                                      \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                 \
  template Var<T> embedding<T>(const Var<T>&, std::span<const std::int32_t>, const Shape&);      \
  template Var<T> dropout<T>(const Var<T>&, T, Rng&, bool);                                      \
  template Var<T> masked_fill<T>(const Var<T>&, const Array<std::uint8_t>&, T);                  \
  template Var<T> causal_softmax<T>(const Var<T>&, std::span<const std::size_t>);                \
  template Var<T> rel_causal_softmax<T>(const Var<T>&, const Var<T>&, std::span<const std::size_t>);        \
  template Var<T> rel_shift<T>(const Var<T>&);                                                   \
  template Var<T> straight_through<T>(const Var<T>&, Array<T>);                                  \
  template Var<T> detach<T>(const Var<T>&);                                                      \
  template Var<T> nll_mean<T>(const Var<T>&, std::span<const std::int32_t>, std::span<const T>); \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);

DPT_INSTANTIATE_OPS(float)
DPT_INSTANTIATE_OPS(double)

}  // namespace dpt::ad
