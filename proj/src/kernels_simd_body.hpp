#pragma once

// Vector-width-generic kernel bodies. Each SIMD translation unit defines a
// Vec trait (register type, width, load/store/fma/reduce) and instantiates
// SimdKernels<Vec> under its own target flags. Summation order per output
// element is fixed by the constants below, never by the thread count.

#include <cstddef>

#include "somcpc/parallel.hpp"

namespace somcpc::kernels::detail {

template <class V>
struct SimdKernels {
    using reg = typename V::reg;
    static constexpr std::size_t W = V::W;

    static double dot(const double* x, const double* y, std::size_t n) {
        reg acc0 = V::zero(), acc1 = V::zero(), acc2 = V::zero(), acc3 = V::zero();
        std::size_t i = 0;
        for (; i + 4 * W <= n; i += 4 * W) {
            acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
            acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
            acc2 = V::fmadd(V::load(x + i + 2 * W), V::load(y + i + 2 * W), acc2);
            acc3 = V::fmadd(V::load(x + i + 3 * W), V::load(y + i + 3 * W), acc3);
        }
        for (; i + W <= n; i += W) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
        double s = V::reduce_add(V::add(V::add(acc0, acc1), V::add(acc2, acc3)));
        for (; i < n; ++i) s += x[i] * y[i];
        return s;
    }

    static void axpy(std::size_t n, double a, const double* x, double* y) {
        const reg va = V::set1(a);
        std::size_t i = 0;
        for (; i + W <= n; i += W) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
        for (; i < n; ++i) y[i] += a * x[i];
    }

    static double sqdist(const double* x, const double* y, std::size_t n) {
        reg acc0 = V::zero(), acc1 = V::zero();
        std::size_t i = 0;
        for (; i + 2 * W <= n; i += 2 * W) {
            const reg d0 = V::sub(V::load(x + i), V::load(y + i));
            const reg d1 = V::sub(V::load(x + i + W), V::load(y + i + W));
            acc0 = V::fmadd(d0, d0, acc0);
            acc1 = V::fmadd(d1, d1, acc1);
        }
        for (; i + W <= n; i += W) {
            const reg d = V::sub(V::load(x + i), V::load(y + i));
            acc0 = V::fmadd(d, d, acc0);
        }
        double s = V::reduce_add(V::add(acc0, acc1));
        for (; i < n; ++i) {
            const double d = x[i] - y[i];
            s += d * d;
        }
        return s;
    }

    // ---- gemm_nn: C[M,N] (+)= A[M,K] B[K,N] --------------------------------
    // Register tile: R rows x 2 vectors. Column panels of kPanelCols keep the
    // active B slice cache-resident while A rows stream over it.

    static constexpr std::size_t kPanelCols = 16 * W;

    template <std::size_t R>
    static void nn_tile(std::size_t k, const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc, std::size_t w0,
                        std::size_t w1, bool accumulate) {
        reg acc[R][2];
        for (std::size_t r = 0; r < R; ++r) {
            if (accumulate) {
                acc[r][0] = V::load_partial(c + r * ldc, w0);
                acc[r][1] = V::load_partial(c + r * ldc + W, w1);
            } else {
                acc[r][0] = V::zero();
                acc[r][1] = V::zero();
            }
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * ldb;
            const reg b0 = V::load_partial(brow, w0);
            const reg b1 = V::load_partial(brow + W, w1);
            for (std::size_t r = 0; r < R; ++r) {
                const reg av = V::set1(a[r * lda + p]);
                acc[r][0] = V::fmadd(av, b0, acc[r][0]);
                acc[r][1] = V::fmadd(av, b1, acc[r][1]);
            }
        }
        for (std::size_t r = 0; r < R; ++r) {
            V::store_partial(c + r * ldc, w0, acc[r][0]);
            V::store_partial(c + r * ldc + W, w1, acc[r][1]);
        }
    }

    static void nn_strip(std::size_t rows, std::size_t k, const double* a, std::size_t lda,
                         const double* b, std::size_t ldb, double* c, std::size_t ldc,
                         std::size_t w0, std::size_t w1, bool accumulate) {
        switch (rows) {
            case 1: nn_tile<1>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
            case 2: nn_tile<2>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
            case 3: nn_tile<3>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
            case 4: nn_tile<4>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
            case 5: nn_tile<5>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
            default: nn_tile<6>(k, a, lda, b, ldb, c, ldc, w0, w1, accumulate); break;
        }
    }

    static void gemm_nn_range(std::size_t m, std::size_t jb, std::size_t je, std::size_t k,
                              const double* a, std::size_t lda, const double* b, std::size_t ldb,
                              double* c, std::size_t ldc, bool accumulate) {
        constexpr std::size_t MR = 6;
        for (std::size_t jp = jb; jp < je; jp += kPanelCols) {
            const std::size_t jpe = jp + kPanelCols < je ? jp + kPanelCols : je;
            for (std::size_t i = 0; i < m; i += MR) {
                const std::size_t rows = m - i < MR ? m - i : MR;
                for (std::size_t j = jp; j < jpe; j += 2 * W) {
                    const std::size_t wcols = jpe - j < 2 * W ? jpe - j : 2 * W;
                    const std::size_t w0 = wcols < W ? wcols : W;
                    const std::size_t w1 = wcols - w0;
                    nn_strip(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, w0, w1,
                             accumulate);
                }
            }
        }
    }

    static void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        std::size_t lda, const double* b, std::size_t ldb, double* c,
                        std::size_t ldc, bool accumulate) {
        if (m * n * k >= (1u << 20) && n >= 2 * W) {
            parallel_for(n / (2 * W) + (n % (2 * W) != 0), [&](std::size_t cb, std::size_t ce) {
                const std::size_t jb = cb * 2 * W;
                const std::size_t je = ce * 2 * W < n ? ce * 2 * W : n;
                gemm_nn_range(m, jb, je, k, a, lda, b, ldb, c, ldc, accumulate);
            });
        } else {
            gemm_nn_range(m, 0, n, k, a, lda, b, ldb, c, ldc, accumulate);
        }
    }

    // ---- gemm_nt: C[M,N] (+)= A[M,K] B[N,K]^T ------------------------------
    // K is the long axis here (batch x time reductions), so the k loop is
    // chunked to keep the streamed row slices in cache.

    static constexpr std::size_t kChunkK = 4096;

    template <std::size_t RM, std::size_t RN>
    static void nt_tile(std::size_t k, const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
        double sums[RM][RN];
        for (std::size_t r = 0; r < RM; ++r)
            for (std::size_t s = 0; s < RN; ++s) sums[r][s] = accumulate ? c[r * ldc + s] : 0.0;
        for (std::size_t ko = 0; ko < k; ko += kChunkK) {
            const std::size_t ke = ko + kChunkK < k ? ko + kChunkK : k;
            reg acc[RM][RN];
            for (std::size_t r = 0; r < RM; ++r)
                for (std::size_t s = 0; s < RN; ++s) acc[r][s] = V::zero();
            std::size_t p = ko;
            for (; p + W <= ke; p += W) {
                reg bv[RN];
                for (std::size_t s = 0; s < RN; ++s) bv[s] = V::load(b + s * ldb + p);
                for (std::size_t r = 0; r < RM; ++r) {
                    const reg av = V::load(a + r * lda + p);
                    for (std::size_t s = 0; s < RN; ++s) acc[r][s] = V::fmadd(av, bv[s], acc[r][s]);
                }
            }
            for (std::size_t r = 0; r < RM; ++r)
                for (std::size_t s = 0; s < RN; ++s) sums[r][s] += V::reduce_add(acc[r][s]);
            for (; p < ke; ++p)
                for (std::size_t r = 0; r < RM; ++r)
                    for (std::size_t s = 0; s < RN; ++s) sums[r][s] += a[r * lda + p] * b[s * ldb + p];
        }
        for (std::size_t r = 0; r < RM; ++r)
            for (std::size_t s = 0; s < RN; ++s) c[r * ldc + s] = sums[r][s];
    }

    static void gemm_nt_range(std::size_t ib, std::size_t ie, std::size_t n, std::size_t k,
                              const double* a, std::size_t lda, const double* b, std::size_t ldb,
                              double* c, std::size_t ldc, bool accumulate) {
        std::size_t i = ib;
        for (; i + 2 <= ie; i += 2) {
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                nt_tile<2, 4>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc, accumulate);
            for (; j < n; ++j)
                nt_tile<2, 1>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc, accumulate);
        }
        for (; i < ie; ++i) {
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                nt_tile<1, 4>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc, accumulate);
            for (; j < n; ++j)
                nt_tile<1, 1>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc, accumulate);
        }
    }

    static void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        std::size_t lda, const double* b, std::size_t ldb, double* c,
                        std::size_t ldc, bool accumulate) {
        if (m * n * k >= (1u << 20) && m >= 2) {
            parallel_for(m / 2 + (m % 2), [&](std::size_t rb, std::size_t re) {
                const std::size_t ib = rb * 2;
                const std::size_t ie = re * 2 < m ? re * 2 : m;
                gemm_nt_range(ib, ie, n, k, a, lda, b, ldb, c, ldc, accumulate);
            });
        } else {
            gemm_nt_range(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
        }
    }
};

}  // namespace somcpc::kernels::detail
