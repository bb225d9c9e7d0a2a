#include "somcpc/kernels.hpp"

#include "somcpc/parallel.hpp"

namespace somcpc::kernels::scalar {

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double sqdist(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

namespace {

void gemm_nn_range(std::size_t m, std::size_t jb, std::size_t je, std::size_t k,
                   const double* a, std::size_t lda, const double* b, std::size_t ldb,
                   double* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = jb; j < je; ++j) crow[j] = 0.0;
        }
        const double* arow = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * ldb;
            for (std::size_t j = jb; j < je; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_range(std::size_t ib, std::size_t ie, std::size_t n, std::size_t k,
                   const double* a, std::size_t lda, const double* b, std::size_t ldb,
                   double* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = ib; i < ie; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = dot(arow, b + j * ldb, k);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

constexpr std::size_t kParallelMacs = 1u << 20;

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (m * n * k >= kParallelMacs && n >= 2) {
        parallel_for(n, [&](std::size_t jb, std::size_t je) {
            gemm_nn_range(m, jb, je, k, a, lda, b, ldb, c, ldc, accumulate);
        });
    } else {
        gemm_nn_range(m, 0, n, k, a, lda, b, ldb, c, ldc, accumulate);
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (m * n * k >= kParallelMacs && m >= 2) {
        parallel_for(m, [&](std::size_t ib, std::size_t ie) {
            gemm_nt_range(ib, ie, n, k, a, lda, b, ldb, c, ldc, accumulate);
        });
    } else {
        gemm_nt_range(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
    }
}

}  // namespace somcpc::kernels::scalar
