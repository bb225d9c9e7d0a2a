#include <immintrin.h>

#include "kernels_simd_body.hpp"

namespace somcpc::kernels::detail {
namespace {

struct VecAvx512 {
    using reg = __m512d;
    static constexpr std::size_t W = 8;

    static reg zero() { return _mm512_setzero_pd(); }
    static reg set1(double v) { return _mm512_set1_pd(v); }
    static reg load(const double* p) { return _mm512_loadu_pd(p); }
    static void store(double* p, reg v) { _mm512_storeu_pd(p, v); }
    static reg add(reg a, reg b) { return _mm512_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm512_sub_pd(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm512_fmadd_pd(a, b, c); }

    static reg load_partial(const double* p, std::size_t n) {
        if (n == W) return load(p);
        return _mm512_maskz_loadu_pd(static_cast<__mmask8>((1u << n) - 1u), p);
    }
    static void store_partial(double* p, std::size_t n, reg v) {
        if (n == W) {
            store(p, v);
        } else if (n > 0) {
            _mm512_mask_storeu_pd(p, static_cast<__mmask8>((1u << n) - 1u), v);
        }
    }
    static double reduce_add(reg v) { return _mm512_reduce_add_pd(v); }
};

}  // namespace

template struct SimdKernels<VecAvx512>;

using KernelsAvx512 = SimdKernels<VecAvx512>;

double dot_avx512(const double* x, const double* y, std::size_t n) { return KernelsAvx512::dot(x, y, n); }
void axpy_avx512(std::size_t n, double a, const double* x, double* y) { KernelsAvx512::axpy(n, a, x, y); }
double sqdist_avx512(const double* x, const double* y, std::size_t n) { return KernelsAvx512::sqdist(x, y, n); }
void gemm_nn_avx512(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    KernelsAvx512::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm_nt_avx512(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    KernelsAvx512::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace somcpc::kernels::detail
