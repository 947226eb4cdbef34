// Compiled with -mavx2 -mfma; only reached after a cpuid check.
#include "ewclab/kernels/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace ewclab::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4 x 8 register block: four rows of c, two ymm columns each.
inline void block_4x8(std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
    __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
    __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        __m256d av = _mm256_broadcast_sd(a + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a + lda + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a + 2 * lda + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a + 3 * lda + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
    }
    _mm256_storeu_pd(c, c00);
    _mm256_storeu_pd(c + 4, c01);
    _mm256_storeu_pd(c + ldc, c10);
    _mm256_storeu_pd(c + ldc + 4, c11);
    _mm256_storeu_pd(c + 2 * ldc, c20);
    _mm256_storeu_pd(c + 2 * ldc + 4, c21);
    _mm256_storeu_pd(c + 3 * ldc, c30);
    _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row of c over columns [j0, n): ymm steps then a scalar tail.
inline void row_tail(std::size_t j0, std::size_t n, std::size_t k,
                     const double* a, const double* b, std::size_t ldb, double* c) {
    std::size_t j = j0;
    for (; j + 4 <= n; j += 4) {
        __m256d acc = _mm256_loadu_pd(c + j);
        for (std::size_t p = 0; p < k; ++p)
            acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb + j), acc);
        _mm256_storeu_pd(c + j, acc);
    }
    for (; j < n; ++j) {
        double acc = c[j];
        for (std::size_t p = 0; p < k; ++p) acc = __builtin_fma(a[p], b[p * ldb + j], acc);
        c[j] = acc;
    }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    const std::size_t n8 = n - n % 8;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        for (std::size_t j = 0; j < n8; j += 8)
            block_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        for (std::size_t r = 0; r < 4; ++r)
            row_tail(n8, n, k, a + (i + r) * lda, b, ldb, c + (i + r) * ldc);
    }
    for (; i < m; ++i) row_tail(0, n, k, a + i * lda, b, ldb, c + i * ldc);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double sq_dist_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

constexpr Dispatch kAvx2{Isa::Avx2, "avx2", gemm_nn_avx2, dot_avx2, axpy_avx2, sq_dist_avx2};

} // namespace

const Dispatch* avx2_table() { return &kAvx2; }

} // namespace ewclab::kernels

#else

namespace ewclab::kernels {
const Dispatch* avx2_table() { return nullptr; }
} // namespace ewclab::kernels

#endif
