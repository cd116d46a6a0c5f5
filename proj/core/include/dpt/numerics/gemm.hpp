#pragma once

#include <cstddef>

namespace dpt::blas {

enum class Op { kNone, kTrans };

// C (+)= op(A) * op(B), row-major, op(A) is m x k and op(B) is k x n.
// Every output element is a sequential fused multiply-add chain over k in
// index order, whatever m and n are, so results for a given row/column do not
// depend on the size of the rest of the matrix. Causality checks rely on it.
template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

extern template void gemm<float>(Op, Op, std::size_t, std::size_t, std::size_t, const float*,
                                 std::size_t, const float*, std::size_t, float*, std::size_t, bool);
extern template void gemm<double>(Op, Op, std::size_t, std::size_t, std::size_t, const double*,
                                  std::size_t, const double*, std::size_t, double*, std::size_t,
                                  bool);

}  // namespace dpt::blas
