#include "dpt/numerics/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace dpt::blas {
namespace {

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kRows = 6;

template <typename T>
struct Simd {
  static constexpr std::size_t kLanes = 64 / sizeof(T);
  static constexpr std::size_t kCols = 2 * kLanes;
  typedef T Vec __attribute__((vector_size(64)));

  static Vec load(const T* p) {
    Vec v;
    std::memcpy(&v, p, sizeof(Vec));
    return v;
  }
  static void store(T* p, const Vec& v) { std::memcpy(p, &v, sizeof(Vec)); }
};

template <typename T>
struct Scratch {
  std::vector<T> a;
  std::vector<T> b;
};

template <typename T>
Scratch<T>& scratch() {
  thread_local Scratch<T> s;
  return s;
}

// acc[r] covers one row of a kRows x kCols tile; lanes past (rows, cols) are
// computed on zero padding and discarded.
template <typename T>
void micro_kernel(const T* ap, const T* bp, std::size_t kc, T* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols, bool first) {
  using S = Simd<T>;
  using Vec = typename S::Vec;
  constexpr std::size_t L = S::kLanes;
  constexpr std::size_t NR = S::kCols;

  Vec acc0[kRows];
  Vec acc1[kRows];
  if (first) {
    for (std::size_t r = 0; r < kRows; ++r) {
      acc0[r] = Vec{};
      acc1[r] = Vec{};
    }
  } else {
    T tmp[NR];
    for (std::size_t r = 0; r < kRows; ++r) {
      std::fill(tmp, tmp + NR, T(0));
      if (r < rows) std::copy(c + r * ldc, c + r * ldc + cols, tmp);
      acc0[r] = S::load(tmp);
      acc1[r] = S::load(tmp + L);
    }
  }

  for (std::size_t kk = 0; kk < kc; ++kk) {
    const Vec b0 = S::load(bp + kk * NR);
    const Vec b1 = S::load(bp + kk * NR + L);
    const T* a = ap + kk * kRows;
#pragma GCC unroll 6
    for (std::size_t r = 0; r < kRows; ++r) {
      acc0[r] += a[r] * b0;
      acc1[r] += a[r] * b1;
    }
  }

  T tmp[NR];
  for (std::size_t r = 0; r < rows; ++r) {
    S::store(tmp, acc0[r]);
    S::store(tmp + L, acc1[r]);
    std::copy(tmp, tmp + cols, c + r * ldc);
  }
}

}  // namespace

template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
    }
    return;
  }
  constexpr std::size_t NR = Simd<T>::kCols;
  const std::size_t panels = (n + NR - 1) / NR;

  auto& s = scratch<T>();
  s.b.resize(kBlockK * panels * NR);
  s.a.resize(kBlockK * kRows);

  auto a_at = [&](std::size_t i, std::size_t kk) {
    return op_a == Op::kNone ? a[i * lda + kk] : a[kk * lda + i];
  };

  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - k0);

    for (std::size_t p = 0; p < panels; ++p) {
      T* dst = s.b.data() + p * kc * NR;
      const std::size_t j0 = p * NR;
      const std::size_t nc = std::min(NR, n - j0);
      for (std::size_t kk = 0; kk < kc; ++kk) {
        T* row = dst + kk * NR;
        if (op_b == Op::kNone) {
          const T* src = b + (k0 + kk) * ldb + j0;
          std::copy(src, src + nc, row);
        } else {
          for (std::size_t j = 0; j < nc; ++j) row[j] = b[(j0 + j) * ldb + k0 + kk];
        }
        std::fill(row + nc, row + NR, T(0));
      }
    }

    const bool first = k0 == 0 && !accumulate;
    for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
      const std::size_t mr = std::min(kRows, m - i0);
      T* ap = s.a.data();
      for (std::size_t kk = 0; kk < kc; ++kk) {
        for (std::size_t r = 0; r < kRows; ++r) {
          ap[kk * kRows + r] = r < mr ? a_at(i0 + r, k0 + kk) : T(0);
        }
      }
      for (std::size_t p = 0; p < panels; ++p) {
        const std::size_t j0 = p * NR;
        micro_kernel<T>(ap, s.b.data() + p * kc * NR, kc, c + i0 * ldc + j0, ldc, mr,
                        std::min(NR, n - j0), first);
      }
    }
  }
}

template void gemm<float>(Op, Op, std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                          const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(Op, Op, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t, bool);

}  // namespace dpt::blas
