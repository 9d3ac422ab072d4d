#pragma once

#include <cstdint>

namespace spikeforge::detail {

// Row-major C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C.
//
// Dispatches to a packed AVX-512 microkernel when compiled for a machine
// that has it (the training hot path: conv im2col panels and dense layers),
// otherwise to CBLAS when available, otherwise to a plain blocked loop.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
          std::int64_t ldc);

extern template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, float,
                                 const float*, std::int64_t, const float*, std::int64_t, float,
                                 float*, std::int64_t);
extern template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, double,
                                  const double*, std::int64_t, const double*, std::int64_t, double,
                                  double*, std::int64_t);

}  // namespace spikeforge::detail
