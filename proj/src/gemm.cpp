#include "gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "spikeforge/common.hpp"

#ifdef __AVX512F__
#include <immintrin.h>
#define SPIKEFORGE_GEMM_AVX512 1
#endif

#if !defined(SPIKEFORGE_GEMM_AVX512) && defined(SPIKEFORGE_USE_OPENBLAS)
#include <cblas.h>
#endif

namespace spikeforge::detail {

namespace {

// Panel sizes: the packed B panel (KC x NR strips) stays L2-resident, the
// packed A micro-panels stream from L1.
constexpr std::int64_t kKC = 512;
constexpr std::int64_t kNC = 960;

template <typename T>
struct Tile;

#ifdef SPIKEFORGE_GEMM_AVX512

template <>
struct Tile<float> {
    static constexpr std::int64_t MR = 8;
    static constexpr std::int64_t NR = 48;  // 3 zmm of 16 floats

    // C tile [MR x NR] += A-panel (k-major, MR-wide) * B-panel (k-major,
    // NR-wide); alpha/beta applied at the store.
    static void run(std::int64_t kc, float alpha, const float* ap, const float* bp, float beta,
                    float* c, std::int64_t ldc, std::int64_t m_valid, std::int64_t n_valid) {
        __m512 acc[MR][3];
        for (int r = 0; r < MR; ++r) {
            for (int j = 0; j < 3; ++j) acc[r][j] = _mm512_setzero_ps();
        }
        for (std::int64_t k = 0; k < kc; ++k) {
            const __m512 b0 = _mm512_loadu_ps(bp + k * NR);
            const __m512 b1 = _mm512_loadu_ps(bp + k * NR + 16);
            const __m512 b2 = _mm512_loadu_ps(bp + k * NR + 32);
            const float* arow = ap + k * MR;
            for (int r = 0; r < MR; ++r) {
                const __m512 a = _mm512_set1_ps(arow[r]);
                acc[r][0] = _mm512_fmadd_ps(a, b0, acc[r][0]);
                acc[r][1] = _mm512_fmadd_ps(a, b1, acc[r][1]);
                acc[r][2] = _mm512_fmadd_ps(a, b2, acc[r][2]);
            }
        }
        const __m512 valpha = _mm512_set1_ps(alpha);
        const __m512 vbeta = _mm512_set1_ps(beta);
        for (std::int64_t r = 0; r < m_valid; ++r) {
            float* crow = c + r * ldc;
            for (int j = 0; j < 3; ++j) {
                const std::int64_t n0 = j * 16;
                if (n0 >= n_valid) break;
                const std::int64_t lanes = std::min<std::int64_t>(16, n_valid - n0);
                const __mmask16 mask = static_cast<__mmask16>((1u << lanes) - 1u);
                __m512 v = _mm512_mul_ps(acc[r][j], valpha);
                if (beta != 0.0f) {
                    const __m512 old = _mm512_maskz_loadu_ps(mask, crow + n0);
                    v = _mm512_fmadd_ps(vbeta, old, v);
                }
                _mm512_mask_storeu_ps(crow + n0, mask, v);
            }
        }
    }
};

template <>
struct Tile<double> {
    static constexpr std::int64_t MR = 8;
    static constexpr std::int64_t NR = 24;  // 3 zmm of 8 doubles

    static void run(std::int64_t kc, double alpha, const double* ap, const double* bp, double beta,
                    double* c, std::int64_t ldc, std::int64_t m_valid, std::int64_t n_valid) {
        __m512d acc[MR][3];
        for (int r = 0; r < MR; ++r) {
            for (int j = 0; j < 3; ++j) acc[r][j] = _mm512_setzero_pd();
        }
        for (std::int64_t k = 0; k < kc; ++k) {
            const __m512d b0 = _mm512_loadu_pd(bp + k * NR);
            const __m512d b1 = _mm512_loadu_pd(bp + k * NR + 8);
            const __m512d b2 = _mm512_loadu_pd(bp + k * NR + 16);
            const double* arow = ap + k * MR;
            for (int r = 0; r < MR; ++r) {
                const __m512d a = _mm512_set1_pd(arow[r]);
                acc[r][0] = _mm512_fmadd_pd(a, b0, acc[r][0]);
                acc[r][1] = _mm512_fmadd_pd(a, b1, acc[r][1]);
                acc[r][2] = _mm512_fmadd_pd(a, b2, acc[r][2]);
            }
        }
        const __m512d valpha = _mm512_set1_pd(alpha);
        const __m512d vbeta = _mm512_set1_pd(beta);
        for (std::int64_t r = 0; r < m_valid; ++r) {
            double* crow = c + r * ldc;
            for (int j = 0; j < 3; ++j) {
                const std::int64_t n0 = j * 8;
                if (n0 >= n_valid) break;
                const std::int64_t lanes = std::min<std::int64_t>(8, n_valid - n0);
                const __mmask8 mask = static_cast<__mmask8>((1u << lanes) - 1u);
                __m512d v = _mm512_mul_pd(acc[r][j], valpha);
                if (beta != 0.0) {
                    const __m512d old = _mm512_maskz_loadu_pd(mask, crow + n0);
                    v = _mm512_fmadd_pd(vbeta, old, v);
                }
                _mm512_mask_storeu_pd(crow + n0, mask, v);
            }
        }
    }
};

template <typename T>
T load_op(const T* p, std::int64_t ld, bool trans, std::int64_t row, std::int64_t col) {
    return trans ? p[col * ld + row] : p[row * ld + col];
}

template <typename T>
std::vector<T>& pack_a_buffer() {
    static thread_local std::vector<T> buf;
    return buf;
}

template <typename T>
std::vector<T>& pack_b_buffer() {
    static thread_local std::vector<T> buf;
    return buf;
}

// A panel: micro-panels of MR rows, k-major within each micro-panel,
// zero-padded to a multiple of MR rows.
template <typename T>
void pack_a(const T* a, std::int64_t lda, bool trans, std::int64_t m0, std::int64_t mc,
            std::int64_t k0, std::int64_t kc, T* ap) {
    constexpr std::int64_t MR = Tile<T>::MR;
    const std::int64_t panels = (mc + MR - 1) / MR;
    for (std::int64_t p = 0; p < panels; ++p) {
        T* dst = ap + p * MR * kc;
        const std::int64_t rows = std::min<std::int64_t>(MR, mc - p * MR);
        for (std::int64_t k = 0; k < kc; ++k) {
            for (std::int64_t r = 0; r < MR; ++r) {
                dst[k * MR + r] =
                    r < rows ? load_op(a, lda, trans, m0 + p * MR + r, k0 + k) : T(0);
            }
        }
    }
}

// B panel: micro-panels of NR columns, k-major, zero-padded to NR.
template <typename T>
void pack_b(const T* b, std::int64_t ldb, bool trans, std::int64_t k0, std::int64_t kc,
            std::int64_t n0, std::int64_t nc, T* bp) {
    constexpr std::int64_t NR = Tile<T>::NR;
    const std::int64_t panels = (nc + NR - 1) / NR;
    for (std::int64_t p = 0; p < panels; ++p) {
        T* dst = bp + p * NR * kc;
        const std::int64_t cols = std::min<std::int64_t>(NR, nc - p * NR);
        if (!trans && cols == NR) {
            // contiguous row segments of B
            for (std::int64_t k = 0; k < kc; ++k) {
                std::memcpy(dst + k * NR, b + (k0 + k) * ldb + n0 + p * NR, sizeof(T) * NR);
            }
        } else {
            for (std::int64_t k = 0; k < kc; ++k) {
                for (std::int64_t j = 0; j < NR; ++j) {
                    dst[k * NR + j] =
                        j < cols ? load_op(b, ldb, trans, k0 + k, n0 + p * NR + j) : T(0);
                }
            }
        }
    }
}

template <typename T>
void gemm_avx512(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
                 const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
                 std::int64_t ldc) {
    constexpr std::int64_t MR = Tile<T>::MR;
    constexpr std::int64_t NR = Tile<T>::NR;
    const std::int64_t n_blocks = (n + kNC - 1) / kNC;
    parallel_for(n_blocks, [&](std::int64_t jb_begin, std::int64_t jb_end) {
        auto& apack = pack_a_buffer<T>();
        auto& bpack = pack_b_buffer<T>();
        for (std::int64_t jb = jb_begin; jb < jb_end; ++jb) {
            const std::int64_t n0 = jb * kNC;
            const std::int64_t nc = std::min<std::int64_t>(kNC, n - n0);
            const std::int64_t nc_padded = (nc + NR - 1) / NR * NR;
            for (std::int64_t k0 = 0; k0 < k; k0 += kKC) {
                const std::int64_t kc = std::min<std::int64_t>(kKC, k - k0);
                bpack.resize(static_cast<std::size_t>(nc_padded * kc));
                pack_b(b, ldb, tb, k0, kc, n0, nc, bpack.data());
                // k-block accumulation: the first block applies the caller's
                // beta, later blocks accumulate.
                const T beta_block = k0 == 0 ? beta : T(1);
                const std::int64_t mc_padded = (m + MR - 1) / MR * MR;
                apack.resize(static_cast<std::size_t>(mc_padded * kc));
                pack_a(a, lda, ta, 0, m, k0, kc, apack.data());
                for (std::int64_t i0 = 0; i0 < m; i0 += MR) {
                    const std::int64_t mv = std::min<std::int64_t>(MR, m - i0);
                    const T* ap = apack.data() + (i0 / MR) * MR * kc;
                    for (std::int64_t j0 = 0; j0 < nc; j0 += NR) {
                        const std::int64_t nv = std::min<std::int64_t>(NR, nc - j0);
                        Tile<T>::run(kc, alpha, ap, bpack.data() + (j0 / NR) * NR * kc, beta_block,
                                     c + i0 * ldc + n0 + j0, ldc, mv, nv);
                    }
                }
            }
        }
    }, 1);
}

#endif  // SPIKEFORGE_GEMM_AVX512

template <typename T>
void gemm_reference(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
                    const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
                    std::int64_t ldc) {
    parallel_for(m, [&](std::int64_t rb, std::int64_t re) {
        for (std::int64_t i = rb; i < re; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                T acc = 0;
                for (std::int64_t p = 0; p < k; ++p) {
                    const T av = ta ? a[p * lda + i] : a[i * lda + p];
                    const T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                    acc += av * bv;
                }
                c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
            }
        }
    }, 8);
}

}  // namespace

template <typename T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                c[i * ldc + j] = beta == T(0) ? T(0) : beta * c[i * ldc + j];
            }
        }
        return;
    }
#ifdef SPIKEFORGE_GEMM_AVX512
    if (m * n * k >= 4096) {
        gemm_avx512(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
#elif defined(SPIKEFORGE_USE_OPENBLAS)
    if constexpr (std::is_same_v<T, float>) {
        cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                    static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                    static_cast<int>(ldc));
        return;
    } else if constexpr (std::is_same_v<T, double>) {
        cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                    static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                    static_cast<int>(ldc));
        return;
    }
#endif
    gemm_reference(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, float, const float*,
                          std::int64_t, const float*, std::int64_t, float, float*, std::int64_t);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, double,
                           const double*, std::int64_t, const double*, std::int64_t, double,
                           double*, std::int64_t);

}  // namespace spikeforge::detail
