#pragma once

// Row-major GEMM backed by OpenBLAS: C = alpha·op(A)·op(B) + beta·C.

#include <cstddef>

namespace skupatch::detail {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace skupatch::detail
