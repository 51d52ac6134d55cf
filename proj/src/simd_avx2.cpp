// Compiled with -mavx2 -mfma. Only reached after a runtime CPU check.
#include <immintrin.h>

#include "natlas/simd.hpp"

namespace natlas::simd {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void affine_avx2(const double* w, const double* x, const double* b, double* y, std::size_t rows,
                 std::size_t cols) {
    std::size_t r = 0;
    if (cols % 4 == 0) {
        // Four rows at a time, reduced together with one transpose-add.
        for (; r + 4 <= rows; r += 4) {
            const double* w0 = w + r * cols;
            __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
            for (std::size_t i = 0; i < cols; i += 4) {
                const __m256d xv = _mm256_loadu_pd(x + i);
                a0 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + i), xv, a0);
                a1 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + cols + i), xv, a1);
                a2 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + 2 * cols + i), xv, a2);
                a3 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + 3 * cols + i), xv, a3);
            }
            const __m256d s01 = _mm256_hadd_pd(a0, a1);
            const __m256d s23 = _mm256_hadd_pd(a2, a3);
            const __m256d lo = _mm256_permute2f128_pd(s01, s23, 0x20);
            const __m256d hi = _mm256_permute2f128_pd(s01, s23, 0x31);
            _mm256_storeu_pd(y + r, _mm256_add_pd(_mm256_add_pd(lo, hi), _mm256_loadu_pd(b + r)));
        }
    }
    for (; r < rows; ++r) y[r] = b[r] + dot_avx2(w + r * cols, x, cols);
}

void affine_transposed_acc_avx2(const double* w, const double* g, double* out, std::size_t rows,
                                std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (g[r] != 0.0) axpy_avx2(g[r], w + r * cols, out, cols);
    }
}

void outer_acc_avx2(const double* g, const double* x, double* grad_w, std::size_t rows,
                    std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (g[r] != 0.0) axpy_avx2(g[r], x, grad_w + r * cols, cols);
    }
}

}  // namespace

const KernelTable* avx2_kernels() {
    static const KernelTable table{Isa::avx2, dot_avx2, axpy_avx2, affine_avx2,
                                   affine_transposed_acc_avx2, outer_acc_avx2};
    return &table;
}

}  // namespace natlas::simd
