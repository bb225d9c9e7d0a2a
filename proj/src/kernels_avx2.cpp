#include <immintrin.h>

#include "kernels_simd_body.hpp"

namespace somcpc::kernels::detail {
namespace {

struct VecAvx2 {
    using reg = __m256d;
    static constexpr std::size_t W = 4;

    static reg zero() { return _mm256_setzero_pd(); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }

    static __m256i mask(std::size_t n) {
        alignas(32) static constexpr long long kMask[8] = {-1, -1, -1, -1, 0, 0, 0, 0};
        return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMask + 4 - n));
    }
    static reg load_partial(const double* p, std::size_t n) {
        if (n == W) return load(p);
        if (n == 0) return zero();
        return _mm256_maskload_pd(p, mask(n));
    }
    static void store_partial(double* p, std::size_t n, reg v) {
        if (n == W) {
            store(p, v);
        } else if (n > 0) {
            _mm256_maskstore_pd(p, mask(n), v);
        }
    }
    static double reduce_add(reg v) {
        const __m128d lo = _mm256_castpd256_pd128(v);
        const __m128d hi = _mm256_extractf128_pd(v, 1);
        const __m128d s = _mm_add_pd(lo, hi);
        return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
    }
};

}  // namespace

template struct SimdKernels<VecAvx2>;

using KernelsAvx2 = SimdKernels<VecAvx2>;

double dot_avx2(const double* x, const double* y, std::size_t n) { return KernelsAvx2::dot(x, y, n); }
void axpy_avx2(std::size_t n, double a, const double* x, double* y) { KernelsAvx2::axpy(n, a, x, y); }
double sqdist_avx2(const double* x, const double* y, std::size_t n) { return KernelsAvx2::sqdist(x, y, n); }
void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    KernelsAvx2::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    KernelsAvx2::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace somcpc::kernels::detail
